"""
剪枝模块
掩码与阈值、保留权重的重训练、dropout 比例调整、层冻结、迭代剪枝以及死神经元移除
"""
import logging
import math
from typing import Dict, Iterable, List, Optional, Set, Tuple

import numpy as np
import pandas as pd

from config import PRUNE_DEFAULTS
from errors import PruningError, ShapeError
from models import MaskedParam, PruneConfig, PruneRecordRow, TrainConfig
from network import Dataset, Model, evaluate, train
from tensor_engine import FLOAT
from utils import atomic_output

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# 单层操作
# ---------------------------------------------------------------------------

def layer_std(p: MaskedParam) -> float:
    """未被剪掉的权重的总体标准差（除以个数）"""
    live = p.weights[p.mask == 1].astype(np.float64)
    if live.size == 0:
        raise PruningError("该层权重已全部被剪掉，无法计算标准差")
    return float(np.sqrt(np.mean((live - live.mean()) ** 2)))


def compute_threshold(p: MaskedParam, q: float) -> float:
    """阈值 = q × 该层存活权重的标准差"""
    if q < 0:
        raise PruningError(f"quality 必须 >= 0: {q}")
    return q * layer_std(p)


def prune_layer(p: MaskedParam, threshold: float) -> MaskedParam:
    """
    剪掉 |w| < threshold 的连接

    Args:
        p: 带掩码的权重
        threshold: 阈值（等于阈值的权重保留）

    Returns:
        新的 MaskedParam，被剪掉的位置权重存为 0，已剪掉的位置不会恢复
    """
    if not threshold >= 0:
        raise PruningError(f"阈值必须 >= 0: {threshold}")
    mask = np.where(np.abs(p.weights) < threshold, FLOAT(0), p.mask)
    weights = np.where(mask == 1, p.weights, FLOAT(0))
    return MaskedParam(weights=weights, mask=mask, bias=p.bias.copy())


def masked_grad(grad, mask) -> np.ndarray:
    """梯度乘以掩码，被剪掉的权重不接收梯度（也就不接收权重衰减）"""
    grad = np.asarray(grad, dtype=FLOAT)
    if grad.shape != mask.shape:
        raise ShapeError(f"梯度形状 {grad.shape} 与掩码形状 {mask.shape} 不一致")
    return np.where(mask == 1, grad, FLOAT(0))


def _exact_count(fraction: float, n: int) -> int:
    """⌈f·n⌉，容忍 0.3×10 这类浮点误差"""
    return min(n, int(math.ceil(fraction * n - 1e-9)))


def rank_prune(p: MaskedParam, fraction: float) -> MaskedParam:
    """
    按幅值排序精确剪掉 ⌈f·n⌉ 个最小的权重

    已剪掉的权重（存储值为 0）排在最前面；幅值相同时下标小的先被剪。
    """
    if not 0.0 <= fraction <= 1.0:
        raise PruningError(f"剪枝比例必须在 [0, 1] 内: {fraction}")
    count = _exact_count(fraction, p.total)
    order = np.argsort(np.abs(p.weights).ravel(), kind="stable")
    mask = p.mask.copy().ravel()
    mask[order[:count]] = 0
    mask = mask.reshape(p.mask.shape)
    return MaskedParam(weights=np.where(mask == 1, p.weights, FLOAT(0)), mask=mask, bias=p.bias.copy())


def adjust_dropout(d_o: float, c_io: int, c_ir: int) -> float:
    """
    按剩余连接数缩小 dropout 比例：D_r = D_o · sqrt(C_ir / C_io)

    Args:
        d_o: 原始 dropout 比例
        c_io: 原始连接数
        c_ir: 剪枝后剩余连接数
    """
    if c_io <= 0:
        raise PruningError(f"原始连接数必须为正: {c_io}")
    if not 0 <= c_ir <= c_io:
        raise PruningError(f"剩余连接数 {c_ir} 超出范围 [0, {c_io}]")
    if not 0.0 <= d_o < 1.0:
        raise PruningError(f"dropout 比例必须在 [0, 1) 内: {d_o}")
    return d_o * math.sqrt(c_ir / c_io)


# ---------------------------------------------------------------------------
# 整个模型
# ---------------------------------------------------------------------------

def prune_model(model: Model, qualities: List[float]) -> Tuple[Model, Dict[str, float]]:
    """
    对每个带权重层按各自的 quality 计算阈值并剪枝

    Returns:
        (剪枝后的新模型, 层名 -> 阈值)
    """
    names = model.layer_names()
    if len(qualities) != len(names):
        raise PruningError(f"quality 个数 {len(qualities)} 与带权重层数 {len(names)} 不一致")
    model = model.clone()
    thresholds = {}
    for name, q in zip(names, qualities):
        p = model.params[name]
        if p.live_count == 0:
            logger.warning("层 %s 已没有存活权重，跳过", name)
            thresholds[name] = 0.0
            continue
        threshold = compute_threshold(p, q)
        model.params[name] = prune_layer(p, threshold)
        thresholds[name] = threshold
        logger.info("层 %s: q=%.4g 阈值=%.6g 剩余 %d/%d", name, q, threshold,
                    model.params[name].live_count, p.total)
    return model, thresholds


def prune_global_fraction(model: Model, fraction: float) -> Model:
    """所有带权重层一起按幅值排序，精确剪掉 ⌈f·N⌉ 个权重"""
    if not 0.0 <= fraction <= 1.0:
        raise PruningError(f"剪枝比例必须在 [0, 1] 内: {fraction}")
    model = model.clone()
    names = model.layer_names()
    magnitudes = np.concatenate([np.abs(model.params[n].weights).ravel() for n in names])
    masks = np.concatenate([model.params[n].mask.ravel() for n in names])
    order = np.argsort(magnitudes, kind="stable")
    masks[order[:_exact_count(fraction, masks.size)]] = 0

    offset = 0
    for name in names:
        p = model.params[name]
        mask = masks[offset:offset + p.total].reshape(p.mask.shape)
        offset += p.total
        model.params[name] = MaskedParam(weights=np.where(mask == 1, p.weights, FLOAT(0)),
                                         mask=mask, bias=p.bias)
    return model


def _live_inputs(spec, p: MaskedParam) -> np.ndarray:
    """每个输出单元（神经元或卷积通道）是否还有存活的输入连接"""
    if spec.kind == "fully_connected":
        return p.mask.any(axis=0)
    return p.mask.reshape(p.mask.shape[0], -1).any(axis=1)


def _live_outputs(consumer, q: MaskedParam, units: int) -> Tuple[np.ndarray, int]:
    """上一层每个单元是否还被下一层读取；返回 (布尔向量, 每单元在全连接输入中占的行数)"""
    if consumer.kind == "conv":
        return q.mask.any(axis=(0, 2, 3)), 1
    per_unit = consumer.fan_in // units
    return q.mask.any(axis=1).reshape(units, per_unit).any(axis=1), per_unit


def prune_dead_neurons(model: Model) -> Tuple[Model, Dict[str, int]]:
    """
    移除死神经元，直到不再变化

    没有输出连接的隐藏单元，或者没有输入连接且常数输出为 0 的隐藏单元，
    其所有输入/输出连接被剪掉、偏置置 0。没有输入但偏置使输出为非零常数的
    单元仍被下一层读取，保留不动。输出层神经元与输入像素从不移除。
    卷积层以输出通道为单位，经池化/展平后对应第一个全连接层的一段连续行。

    Returns:
        (新模型, 层名 -> 本次移除的单元数)
    """
    model = model.clone()
    layers = model.weighted_specs()
    removed: Dict[str, Set[int]] = {spec.name: set() for spec in layers}
    changed = True
    sweeps = 0
    while changed:
        changed = False
        sweeps += 1
        for spec, consumer in zip(layers, layers[1:]):
            p = model.params[spec.name]
            q = model.params[consumer.name]
            units = spec.bias_size
            live_in = _live_inputs(spec, p)
            live_out, per_unit = _live_outputs(consumer, q, units)
            constant = np.maximum(p.bias, 0) if spec.has_relu else p.bias
            dead = (~live_in & (constant == 0)) | ~live_out
            touched = dead & (live_in | live_out | (p.bias != 0))
            if not touched.any():
                continue

            if spec.kind == "fully_connected":
                p.mask[:, dead] = 0
            else:
                p.mask[dead] = 0
            p.bias[dead] = 0
            if consumer.kind == "conv":
                q.mask[:, dead] = 0
            else:
                q.mask[np.repeat(dead, per_unit)] = 0
            p.weights = np.where(p.mask == 1, p.weights, FLOAT(0))
            q.weights = np.where(q.mask == 1, q.weights, FLOAT(0))
            removed[spec.name].update(int(u) for u in np.flatnonzero(touched))
            changed = True

    counts = {name: len(units) for name, units in removed.items()}
    if any(counts.values()):
        logger.info("死神经元移除（%d 轮）: %s", sweeps, counts)
    return model, counts


# ---------------------------------------------------------------------------
# 重训练
# ---------------------------------------------------------------------------

def dropout_rates_for(model: Model, adjust: bool = True) -> Dict[str, float]:
    """
    每个 dropout 位置的比例

    连接数取 dropout 之后那一层的权重矩阵：C_io 为全部连接，C_ir 为存活连接。
    """
    rates = {}
    for spec, following in zip(model.specs, model.specs[1:]):
        if spec.dropout_rate_after <= 0:
            continue
        if not adjust:
            rates[spec.name] = spec.dropout_rate_after
            continue
        p = model.params[following.name]
        rates[spec.name] = adjust_dropout(spec.dropout_rate_after, p.total, p.live_count)
    return rates


def frozen_layers(model: Model, policy: str, iteration: int = 1) -> Set[str]:
    """按冻结策略返回本次迭代不更新的层名（alternate：奇数次冻结卷积层，偶数次冻结全连接层）"""
    conv = {s.name for s in model.weighted_specs() if s.kind == "conv"}
    fc = {s.name for s in model.weighted_specs() if s.kind == "fully_connected"}
    if policy == "none":
        return set()
    if policy == "freeze_conv_retrain_fc":
        return conv
    if policy == "freeze_fc_retrain_conv":
        return fc
    if policy == "alternate":
        return conv if iteration % 2 == 1 else fc
    raise PruningError(f"未知的冻结策略: {policy}")


def retrain_config(base: TrainConfig, lr: Optional[float] = None, epochs: Optional[int] = None) -> TrainConfig:
    """重训练配置：学习率默认取基线学习率的 1/10"""
    update = {"lr": lr if lr is not None else base.lr * PRUNE_DEFAULTS["retrain_lr_ratio"]}
    if epochs is not None:
        update["epochs"] = epochs
    return base.model_copy(update=update)


def retrain(model: Model, dataset: Dataset, cfg: TrainConfig, freeze: str = "none",
            dropout_adjust: bool = True, iteration: int = 1,
            evalset: Optional[Dataset] = None) -> Model:
    """
    剪枝后的重训练：保留存活权重继续训练，掩码位置不接收梯度

    Args:
        model: 剪枝后的模型
        dataset: 训练集
        cfg: 训练配置（通常来自 retrain_config）
        freeze: 冻结策略
        dropout_adjust: 是否按剩余连接数缩小 dropout
        iteration: 第几次迭代（alternate 策略使用）
        evalset: 每轮记录错误率的数据集
    """
    frozen = frozen_layers(model, freeze, iteration)
    if frozen and frozen >= set(model.layer_names()):
        logger.warning("冻结策略 %s 冻结了所有带权重层，重训练不会改变模型", freeze)
    rates = dropout_rates_for(model, dropout_adjust)
    if rates:
        logger.info("重训练 dropout 比例: %s", {k: round(v, 4) for k, v in rates.items()})
    return train(model, dataset, cfg, frozen=frozen, dropout_rates=rates, evalset=evalset)


# ---------------------------------------------------------------------------
# 剪枝记录与迭代剪枝
# ---------------------------------------------------------------------------

class PruneRecord:
    """每次迭代、每一层的剪枝统计"""

    COLUMNS = list(PruneRecordRow.model_fields)

    def __init__(self, baseline_error: Optional[float] = None):
        self.rows: List[PruneRecordRow] = []
        self.baseline_error = baseline_error
        self.stopped_early = False

    def add_model(self, iteration: int, model: Model, thresholds: Dict[str, float],
                  error: Optional[float] = None):
        for name in model.layer_names():
            p = model.params[name]
            self.rows.append(PruneRecordRow(
                iteration=iteration, layer=name, threshold=thresholds.get(name, float("nan")),
                weights_total=p.total, weights_remaining=p.live_count,
                remaining_pct=100.0 * p.live_count / p.total, error_after_retrain=error,
            ))

    def iterations(self) -> List[int]:
        return sorted({row.iteration for row in self.rows})

    def remaining_pct(self, layer: str) -> List[float]:
        return [row.remaining_pct for row in self.rows if row.layer == layer]

    def total_remaining_pct(self, iteration: int) -> float:
        rows = [row for row in self.rows if row.iteration == iteration]
        total = sum(row.weights_total for row in rows)
        return 100.0 * sum(row.weights_remaining for row in rows) / total if total else 0.0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([row.model_dump() for row in self.rows], columns=self.COLUMNS)

    def to_csv(self, path: str):
        with atomic_output(path) as tmp:
            self.to_frame().to_csv(tmp, index=False)


def iterate_prune(model: Model, dataset: Dataset, cfg: PruneConfig,
                  evalset: Optional[Dataset] = None) -> Tuple[Model, PruneRecord]:
    """
    迭代剪枝：每次迭代 = 剪枝 + 死神经元移除 + 重训练

    阈值每次迭代都由重训练后的权重重新计算。提供 evalset 时，若重训练后
    错误率超过基线 + tolerance_pp，提前停止并返回上一次合格的模型。

    Returns:
        (最终模型, 剪枝记录)
    """
    names = model.layer_names()
    if len(cfg.quality) != len(names):
        raise PruningError(f"quality 个数 {len(cfg.quality)} 与带权重层数 {len(names)} 不一致")

    eval_args = (cfg.retrain.eval_batch_size, cfg.retrain.deterministic)
    baseline = evaluate(model, evalset, *eval_args) if evalset is not None else None
    record = PruneRecord(baseline_error=baseline)
    accepted = model
    for iteration in range(1, cfg.iterations + 1):
        pruned, thresholds = prune_model(accepted, cfg.quality_at(iteration))
        pruned, _ = prune_dead_neurons(pruned)
        candidate = retrain(pruned, dataset, cfg.retrain, cfg.freeze_policy,
                            cfg.dropout_adjust, iteration)
        error = evaluate(candidate, evalset, *eval_args) if evalset is not None else None
        if error is not None and error > baseline + cfg.tolerance_pp / 100.0:
            record.stopped_early = True
            logger.warning("第 %d 次迭代错误率 %.4f 超过基线 %.4f + %.2f 个百分点，提前停止",
                           iteration, error, baseline, cfg.tolerance_pp)
            break
        record.add_model(iteration, candidate, thresholds, error)
        accepted = candidate
        logger.info("第 %d/%d 次迭代: 剩余权重 %.2f%%%s", iteration, cfg.iterations,
                    record.total_remaining_pct(iteration),
                    f" 错误率 {error:.4f}" if error is not None else "")
    return accepted, record
