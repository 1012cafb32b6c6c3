"""
命令行入口
训练、剪枝、重训练、迭代剪枝、敏感度分析、导出/校验、报告与权衡实验

用法:
    python cli.py train --config configs/lenet300.ini
    python cli.py iterate --config configs/lenet300.ini --prune-iterations 5
"""
import argparse
import configparser
import gzip
import logging
import os
import shutil
import sys
import urllib.error
import urllib.request
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import ValidationError

from config import (
    ARTIFACT_NAMES, EXIT_CODES, MNIST_BASE_URL, MNIST_SOURCES, TRADEOFF_DEFAULTS,
    TRADEOFF_VARIANTS, TRAIN_DEFAULTS,
)
from errors import CheckpointError, ConfigError, DatasetError, NetPruneError
from models import DecayMode, RunConfig, TradeoffPoint, TrainingState
from network import Dataset, build_preset, evaluate, forward, init_model, load_mnist_idx, train
from pruning import (
    PruneRecord, iterate_prune, prune_dead_neurons, prune_global_fraction, prune_model,
    retrain, retrain_config,
)
from reporting import (
    compression_summary, export_stats, histogram_to_frame, layer_stats, sparsity_bitmap,
    summary_table, tradeoff_curve, weight_histogram, write_report,
)
from sensitivity import curves_to_frame, suggest_qualities, sweep_all
from sparse_format import encode_model, export_model, import_model, load_checkpoint, save_checkpoint, storage_frame
from tensor_engine import FLOAT, Rng
from utils import (
    atomic_output, create_output_dir, file_digest, format_file_size, setup_logging,
    validate_data_paths, validate_distinct_paths, validate_fraction_grid, validate_quality, validate_seed,
)

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# 运行配置
# ---------------------------------------------------------------------------

def load_run_config(path: Optional[str], overrides: Optional[Dict[str, Dict[str, object]]] = None) -> RunConfig:
    """
    读取 INI 配置并叠加命令行参数（命令行优先）

    Args:
        path: 配置文件路径，可为 None（全部来自命令行）
        overrides: section -> {key: value}，值为 None 的项忽略

    Returns:
        RunConfig
    """
    sections = RunConfig.section_models()
    raw: Dict[str, Dict[str, object]] = {}
    if path:
        if not os.path.isfile(path):
            raise ConfigError(f"配置文件不存在: {path}")
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as e:
            raise ConfigError(f"配置文件格式错误: {path}: {e}") from e
        for name in parser.sections():
            if name not in sections:
                raise ConfigError(f"未知的配置段 [{name}]，可选: {', '.join(sections)}")
            unknown = [key for key in parser[name] if key not in sections[name].model_fields]
            if unknown:
                raise ConfigError(f"配置段 [{name}] 中有未知的键: {', '.join(unknown)}")
            raw[name] = dict(parser[name])

    for section, values in (overrides or {}).items():
        values = {key: value for key, value in values.items() if value is not None}
        if values:
            raw.setdefault(section, {}).update(values)

    ok, msg = validate_seed(raw.get("run", {}).get("seed"))
    if not ok:
        raise ConfigError(msg)
    try:
        return RunConfig(**raw)
    except (ValidationError, ValueError) as e:
        raise ConfigError(f"配置无效: {e}") from e


def _out_path(cfg: RunConfig, key: str) -> str:
    return os.path.join(cfg.run.out_dir, ARTIFACT_NAMES[key])


def _source_path(source: str, *targets: str) -> str:
    """检查输入文件不会被本命令的输出覆盖"""
    for target in targets:
        ok, msg = validate_distinct_paths(source, target)
        if not ok:
            raise ConfigError(msg)
    return source


def _load_datasets(cfg: RunConfig) -> Tuple[Dataset, Dataset]:
    """读取训练集与测试集（训练集可按 train_limit 截断）"""
    if cfg.data is None:
        raise ConfigError("配置缺少 [data] 段（数据文件路径）")
    data = cfg.data
    ok, msg = validate_data_paths({
        "train_images": data.train_images, "train_labels": data.train_labels,
        "test_images": data.test_images, "test_labels": data.test_labels,
    })
    if not ok:
        raise ConfigError(msg)
    train_set = load_mnist_idx(data.train_images, data.train_labels).limit(data.train_limit)
    test_set = load_mnist_idx(data.test_images, data.test_labels)
    return train_set, test_set


def _validation_slice(cfg: RunConfig, test_set: Dataset) -> Dataset:
    """按种子从测试集中固定抽取的验证切片"""
    return test_set.split(cfg.data.validation_size, cfg.run.seed)[1]


def _write_csv(frame: pd.DataFrame, path: str):
    with atomic_output(path) as tmp:
        frame.to_csv(tmp, index=False)


def _prune_config(cfg: RunConfig, model):
    ok, msg = validate_quality(cfg.prune.quality, len(model.layer_names()))
    if not ok:
        raise ConfigError(msg)
    return cfg.prune_config(len(model.layer_names()))


# ---------------------------------------------------------------------------
# 子命令
# ---------------------------------------------------------------------------

def cmd_fetch(dest: str, base_url: str = MNIST_BASE_URL, force: bool = False) -> int:
    """下载 MNIST IDX 文件并校验摘要"""
    create_output_dir(dest)
    for key, source in MNIST_SOURCES.items():
        gz_path = os.path.join(dest, source["file"])
        idx_path = gz_path[:-len(".gz")]
        if os.path.exists(idx_path) and not force:
            print(f"已存在，跳过: {idx_path}")
            continue
        url = base_url.rstrip("/") + "/" + source["file"]
        algorithm = "sha256" if source.get("sha256") else "md5"
        with atomic_output(gz_path) as tmp:
            try:
                urllib.request.urlretrieve(url, tmp)
            except (urllib.error.URLError, OSError) as e:
                raise DatasetError(f"下载失败: {url}: {e}") from e
            actual = file_digest(tmp, algorithm)
            if actual != source[algorithm]:
                raise DatasetError(f"{source['file']} 的 {algorithm} 校验失败: {actual}（应为 {source[algorithm]}）")
        with gzip.open(gz_path, "rb") as src, atomic_output(idx_path) as tmp:
            with open(tmp, "wb") as dst:
                shutil.copyfileobj(src, dst)
        print(f"已下载 {key}: {idx_path}（{format_file_size(os.path.getsize(idx_path))}）")
    return EXIT_CODES["ok"]


def cmd_train(cfg: RunConfig) -> int:
    """训练基线模型，保存稠密检查点与每轮指标"""
    train_set, test_set = _load_datasets(cfg)
    train_cfg = cfg.train_config()
    model = init_model(build_preset(cfg.run.arch), cfg.run.seed)
    model = train(model, train_set, train_cfg)
    error = evaluate(model, test_set, train_cfg.eval_batch_size, train_cfg.deterministic)

    last_lr = train_cfg.lr_at(max(train_cfg.epochs - 1, 0))
    save_checkpoint(model, _out_path(cfg, "baseline"), TrainingState(epoch=train_cfg.epochs, lr=last_lr))
    metrics = pd.DataFrame(model.history, columns=["epoch", "lr", "loss", "train_error"])
    metrics["test_error"] = np.nan
    if len(metrics):
        metrics.loc[metrics.index[-1], "test_error"] = error
    _write_csv(metrics, _out_path(cfg, "train_metrics"))
    print(f"训练完成: {cfg.run.arch}, 测试错误率 {error * 100:.2f}%")
    return EXIT_CODES["ok"]


def cmd_prune(cfg: RunConfig, checkpoint: Optional[str] = None) -> int:
    """按 quality × 标准差剪枝（不重训练）"""
    source = _source_path(checkpoint or _out_path(cfg, "baseline"),
                          _out_path(cfg, "pruned"), _out_path(cfg, "prune_record"))
    model, state = load_checkpoint(source)
    prune_cfg = _prune_config(cfg, model)
    pruned, thresholds = prune_model(model, prune_cfg.quality_at(1))
    pruned, removed = prune_dead_neurons(pruned)
    record = PruneRecord()
    record.add_model(1, pruned, thresholds)
    save_checkpoint(pruned, _out_path(cfg, "pruned"), state)
    record.to_csv(_out_path(cfg, "prune_record"))
    print(f"剪枝完成: 剩余权重 {record.total_remaining_pct(1):.2f}%，移除死神经元 {sum(removed.values())} 个")
    return EXIT_CODES["ok"]


def cmd_retrain(cfg: RunConfig, checkpoint: Optional[str] = None) -> int:
    """对剪枝后的模型做一次重训练"""
    source = _source_path(checkpoint or _out_path(cfg, "pruned"),
                          _out_path(cfg, "retrained"), _out_path(cfg, "prune_record"))
    model, state = load_checkpoint(source)
    prune_cfg = _prune_config(cfg, model)
    train_set, test_set = _load_datasets(cfg)
    retrained = retrain(model, train_set, prune_cfg.retrain, prune_cfg.freeze_policy, prune_cfg.dropout_adjust)
    error = evaluate(retrained, test_set, prune_cfg.retrain.eval_batch_size, prune_cfg.retrain.deterministic)

    record = PruneRecord()
    record.add_model(1, retrained, {}, error)
    new_state = TrainingState(epoch=state.epoch + prune_cfg.retrain.epochs, lr=prune_cfg.retrain.lr)
    save_checkpoint(retrained, _out_path(cfg, "retrained"), new_state)
    record.to_csv(_out_path(cfg, "prune_record"))
    print(f"重训练完成: 测试错误率 {error * 100:.2f}%，剩余权重 {record.total_remaining_pct(1):.2f}%")
    return EXIT_CODES["ok"]


def cmd_iterate(cfg: RunConfig, checkpoint: Optional[str] = None) -> int:
    """迭代剪枝 + 重训练"""
    source = _source_path(checkpoint or _out_path(cfg, "baseline"),
                          _out_path(cfg, "iterated"), _out_path(cfg, "prune_record"))
    model, state = load_checkpoint(source)
    prune_cfg = _prune_config(cfg, model)
    train_set, test_set = _load_datasets(cfg)
    final, record = iterate_prune(model, train_set, prune_cfg, evalset=test_set)

    iterations = record.iterations()
    epochs = state.epoch + len(iterations) * prune_cfg.retrain.epochs
    save_checkpoint(final, _out_path(cfg, "iterated"), TrainingState(epoch=epochs, lr=prune_cfg.retrain.lr))
    record.to_csv(_out_path(cfg, "prune_record"))
    error = evaluate(final, test_set, prune_cfg.retrain.eval_batch_size, prune_cfg.retrain.deterministic)
    remaining = record.total_remaining_pct(iterations[-1]) if iterations else 100.0
    print(f"迭代剪枝完成: {len(iterations)} 次迭代{'（提前停止）' if record.stopped_early else ''}，"
          f"剩余权重 {remaining:.2f}%，测试错误率 {error * 100:.2f}%"
          f"（基线 {record.baseline_error * 100:.2f}%）")
    return EXIT_CODES["ok"]


def cmd_sensitivity(cfg: RunConfig, checkpoint: Optional[str] = None) -> int:
    """逐层敏感度曲线 + quality 建议"""
    ok, msg = validate_fraction_grid(cfg.sensitivity.fractions)
    if not ok:
        raise ConfigError(msg)
    model, _ = load_checkpoint(checkpoint or _out_path(cfg, "baseline"))
    _, test_set = _load_datasets(cfg)
    evalset = _validation_slice(cfg, test_set)
    curves = sweep_all(model, cfg.sensitivity.fractions, evalset, cfg.run.deterministic, cfg.sensitivity.workers)
    _write_csv(curves_to_frame(curves), _out_path(cfg, "sensitivity"))

    suggestions = suggest_qualities(model, curves, cfg.sensitivity.drop_budget)
    frame = pd.DataFrame([{"layer": name, **values} for name, values in suggestions.items()],
                         columns=["layer", "fraction", "quality"])
    _write_csv(frame, _out_path(cfg, "suggested_quality"))
    print("建议的 quality（精度下降预算 %.2f 个百分点）:" % (cfg.sensitivity.drop_budget * 100))
    print(frame.to_string(index=False))
    return EXIT_CODES["ok"]


def cmd_export(cfg: RunConfig, checkpoint: Optional[str] = None, output: Optional[str] = None,
               index_bits: Optional[int] = None) -> int:
    """导出稀疏 SPNN 文件与存储报告"""
    output = output or _out_path(cfg, "sparse_model")
    source = _source_path(checkpoint or _out_path(cfg, "iterated"), output, _out_path(cfg, "storage_report"))
    model, state = load_checkpoint(source)
    report = export_model(model, output, index_bits, state)
    dense_bytes = len(encode_model(model, state, dense=True)[0])
    _write_csv(storage_frame(report), _out_path(cfg, "storage_report"))
    print(f"稀疏文件 {format_file_size(report.file_bytes)}，稠密检查点 {format_file_size(dense_bytes)}，"
          f"比例 {report.file_bytes / dense_bytes * 100:.1f}%，索引开销 {report.index_overhead_pct:.1f}%")
    return EXIT_CODES["ok"]


def cmd_import_check(cfg: RunConfig, sparse: Optional[str] = None, checkpoint: Optional[str] = None,
                     samples: int = 100) -> int:
    """比较稀疏文件与检查点在随机输入上的前向输出，逐位相同输出 EXACT"""
    original, _ = load_checkpoint(checkpoint or _out_path(cfg, "iterated"))
    imported = import_model(sparse or _out_path(cfg, "sparse_model"))
    inputs = Rng(cfg.run.seed).random((samples,) + original.input_shape).astype(FLOAT)
    expected, _ = forward(original, inputs, "eval", deterministic=cfg.run.deterministic)
    actual, _ = forward(imported, inputs, "eval", deterministic=cfg.run.deterministic)
    if expected.shape == actual.shape and expected.tobytes() == actual.tobytes():
        print("EXACT")
        return EXIT_CODES["ok"]
    diff = float(np.max(np.abs(expected - actual))) if expected.shape == actual.shape else float("nan")
    print(f"MISMATCH（最大差异 {diff:.3g}）")
    return EXIT_CODES["mismatch"]


def cmd_report(cfg: RunConfig, checkpoint: Optional[str] = None, baseline: Optional[str] = None,
               xlsx: bool = False) -> int:
    """逐层统计表、文本报告、掩码位图与权重直方图"""
    path = checkpoint or _out_path(cfg, "iterated")
    model, _ = load_checkpoint(path)
    _, test_set = _load_datasets(cfg)
    evalset = _validation_slice(cfg, test_set)
    stats = layer_stats(model, evalset, cfg.report.act_samples, cfg.run.deterministic)
    export_stats(stats, _out_path(cfg, "layer_stats"))
    if xlsx:
        export_stats(stats, _out_path(cfg, "layer_stats_xlsx"))

    summary = None
    baseline = baseline or _out_path(cfg, "baseline")
    if os.path.exists(baseline) and os.path.abspath(baseline) != os.path.abspath(path):
        base_model, _ = load_checkpoint(baseline)
        summary = compression_summary(base_model, model, evaluate(base_model, test_set), evaluate(model, test_set))
    metadata = {
        "模型": os.path.basename(path),
        "结构": cfg.run.arch,
        "激活统计": f"测试集中按种子 {cfg.run.seed} 抽取的 {min(cfg.report.act_samples, len(evalset))} 个样本",
    }
    write_report(_out_path(cfg, "report"), stats, summary, metadata)

    for spec in model.weighted_specs():
        p = model.params[spec.name]
        if spec.kind == "fully_connected":
            sparsity_bitmap(p, os.path.join(cfg.run.out_dir, f"{spec.name}_mask.pgm"))
        if p.live_count:
            counts, edges = weight_histogram(p, cfg.report.histogram_bins)
            _write_csv(histogram_to_frame(counts, edges), os.path.join(cfg.run.out_dir, f"{spec.name}_histogram.csv"))
    print(summary_table(stats))
    return EXIT_CODES["ok"]


def run_tradeoff(cfg: RunConfig, train_set: Dataset, test_set: Dataset, fractions: List[float],
                 with_l1_l2: bool = False, l1_coefficient: float = TRADEOFF_DEFAULTS["l1_coefficient"]
                 ) -> List[TradeoffPoint]:
    """
    参数量-精度权衡实验

    分别训练 L1、L2 正则化的基线，对每个剪枝比例（全局按幅值）记录：
    不重训练、重训练、以及 L2 逐步加大比例的迭代剪枝；可选 L1 剪枝 + L2 重训练。
    """
    base_cfg = cfg.train_config()
    l2_coefficient = cfg.train.decay_coefficient or TRAIN_DEFAULTS["decay_coefficient"]
    train_cfgs = {
        "l1": base_cfg.model_copy(update={"decay": DecayMode(kind="l1", coefficient=l1_coefficient)}),
        "l2": base_cfg.model_copy(update={"decay": DecayMode(kind="l2", coefficient=l2_coefficient)}),
    }
    retrain_cfgs = {key: retrain_config(c, cfg.prune.retrain_lr, cfg.prune.retrain_epochs)
                    for key, c in train_cfgs.items()}
    specs = build_preset(cfg.run.arch)
    baselines = {key: train(init_model(specs, cfg.run.seed), train_set, c) for key, c in train_cfgs.items()}
    accuracy = {key: 1.0 - evaluate(m, test_set) for key, m in baselines.items()}
    logger.info("权衡实验基线精度: L1 %.4f, L2 %.4f", accuracy["l1"], accuracy["l2"])

    points: List[TradeoffPoint] = []

    def record(variant: str, model, reference: str):
        pruned_pct = 100.0 * (1.0 - model.live_weights() / model.total_weights())
        points.append(TradeoffPoint(variant=TRADEOFF_VARIANTS[variant], parameters_pruned_pct=pruned_pct,
                                    accuracy_delta=(1.0 - evaluate(model, test_set)) - accuracy[reference]))

    def retrained(model, key):
        return retrain(model, train_set, retrain_cfgs[key], cfg.prune.freeze_policy, cfg.prune.dropout_adjust)

    iterative = baselines["l2"]
    for fraction in fractions:
        pruned = {key: prune_global_fraction(m, fraction) for key, m in baselines.items()}
        record("l1_no_retrain", pruned["l1"], "l1")
        record("l2_no_retrain", pruned["l2"], "l2")
        record("l1_retrain", retrained(pruned["l1"], "l1"), "l1")
        record("l2_retrain", retrained(pruned["l2"], "l2"), "l2")
        iterative = retrained(prune_global_fraction(iterative, fraction), "l2")
        record("l2_iterative", iterative, "l2")
        if with_l1_l2:
            record("l1_prune_l2_retrain", retrained(pruned["l1"], "l2"), "l1")
        logger.info("权衡实验: 剪枝比例 %.2f 完成", fraction)
    return points


def cmd_tradeoff(cfg: RunConfig, fractions: Optional[List[float]] = None, with_l1_l2: bool = False,
                 l1_coefficient: float = TRADEOFF_DEFAULTS["l1_coefficient"]) -> int:
    fractions = fractions or TRADEOFF_DEFAULTS["fractions"]
    ok, msg = validate_fraction_grid(fractions)
    if not ok:
        raise ConfigError(msg)
    train_set, test_set = _load_datasets(cfg)
    points = run_tradeoff(cfg, train_set, test_set, fractions, with_l1_l2, l1_coefficient)
    frame = tradeoff_curve(points)
    _write_csv(frame, _out_path(cfg, "tradeoff"))
    print(frame.to_string(index=False))
    return EXIT_CODES["ok"]


# ---------------------------------------------------------------------------
# 参数解析
# ---------------------------------------------------------------------------

def _fraction_list(text: str) -> List[float]:
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"无效的比例列表: {text}")


def _common_parser() -> argparse.ArgumentParser:
    """所有子命令共用的参数：全局参数 + 配置文件中每个键对应的 --<section>-<key>"""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI 配置文件")
    common.add_argument("--seed", help="随机种子（覆盖 [run] seed）")
    common.add_argument("--out-dir", help="输出目录（覆盖 [run] out_dir）")
    common.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None,
                        help="固定求和顺序（默认开启）")
    common.add_argument("-v", "--verbose", action="store_true", help="输出调试日志")
    for section, model in RunConfig.section_models().items():
        group = common.add_argument_group(f"[{section}]")
        for field in model.model_fields:
            group.add_argument(f"--{section}-{field.replace('_', '-')}", dest=f"cfg__{section}__{field}",
                               default=None, metavar="VALUE")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="cli.py", description="神经网络剪枝工具")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fetch", parents=[common], help="下载 MNIST 数据")
    p.add_argument("--dest", default="data", help="保存目录")
    p.add_argument("--base-url", default=MNIST_BASE_URL, help="下载地址")
    p.add_argument("--force", action="store_true", help="重新下载已存在的文件")

    p = sub.add_parser("train", parents=[common], help="训练基线模型")
    p.set_defaults(handler=lambda cfg, a: cmd_train(cfg))

    for name, handler, help_text in (("prune", cmd_prune, "剪枝（不重训练）"),
                                     ("retrain", cmd_retrain, "重训练"),
                                     ("iterate", cmd_iterate, "迭代剪枝 + 重训练"),
                                     ("sensitivity", cmd_sensitivity, "逐层敏感度分析")):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--checkpoint", help="输入检查点")
        p.set_defaults(handler=lambda cfg, a, h=handler: h(cfg, a.checkpoint))

    p = sub.add_parser("export", parents=[common], help="导出稀疏 SPNN 文件")
    p.add_argument("--checkpoint", help="输入检查点")
    p.add_argument("--output", help="输出文件")
    p.add_argument("--index-bits", type=int, help="覆盖索引位宽")
    p.set_defaults(handler=lambda cfg, a: cmd_export(cfg, a.checkpoint, a.output, a.index_bits))

    p = sub.add_parser("import-check", parents=[common], help="校验稀疏文件与检查点输出一致")
    p.add_argument("--sparse", help="稀疏 SPNN 文件")
    p.add_argument("--checkpoint", help="对照检查点")
    p.add_argument("--samples", type=int, default=100, help="随机输入个数")
    p.set_defaults(handler=lambda cfg, a: cmd_import_check(cfg, a.sparse, a.checkpoint, a.samples))

    p = sub.add_parser("report", parents=[common], help="逐层统计报告")
    p.add_argument("--checkpoint", help="输入检查点")
    p.add_argument("--baseline", help="基线检查点（用于压缩汇总）")
    p.add_argument("--xlsx", action="store_true", help="同时导出 Excel")
    p.set_defaults(handler=lambda cfg, a: cmd_report(cfg, a.checkpoint, a.baseline, a.xlsx))

    p = sub.add_parser("tradeoff", parents=[common], help="参数量-精度权衡实验")
    p.add_argument("--fractions", type=_fraction_list, help="剪枝比例，逗号分隔")
    p.add_argument("--with-l1-l2", action="store_true", help="增加 L1 剪枝 + L2 重训练")
    p.add_argument("--l1-coefficient", type=float, default=TRADEOFF_DEFAULTS["l1_coefficient"])
    p.set_defaults(handler=lambda cfg, a: cmd_tradeoff(cfg, a.fractions, a.with_l1_l2, a.l1_coefficient))
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Dict[str, object]]:
    overrides: Dict[str, Dict[str, object]] = {}
    for dest, value in vars(args).items():
        if dest.startswith("cfg__") and value is not None:
            _, section, field = dest.split("__")
            overrides.setdefault(section, {})[field] = value
    run = overrides.setdefault("run", {})
    for key in ("seed", "out_dir", "deterministic"):
        if getattr(args, key) is not None:
            run[key] = getattr(args, key)
    return overrides


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    try:
        if args.command == "fetch":
            return cmd_fetch(args.dest, args.base_url, args.force)
        cfg = load_run_config(args.config, _overrides(args))
        create_output_dir(cfg.run.out_dir)
        return args.handler(cfg, args)
    except NetPruneError as e:
        logger.error("%s", e)
        print(f"错误: {e}", file=sys.stderr)
        return e.exit_code
    except ValidationError as e:
        # 命令内部由配置派生的参数模型校验失败，同样按配置错误退出
        logger.error("%s", e)
        print(f"错误: 配置无效: {e}", file=sys.stderr)
        return EXIT_CODES["config"]


if __name__ == "__main__":
    sys.exit(main())
