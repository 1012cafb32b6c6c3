#!/usr/bin/env python3
"""
验收测试脚本
在真实 MNIST 上运行训练、迭代剪枝、导出与报告，逐项检查验收指标并生成 Markdown 报告

用法:
    python run_acceptance.py --mnist-dir data
    python run_acceptance.py --mnist-dir data --full   # 另外运行完整 LeNet-5 与 3 个种子的正则化对比（耗时较长）
"""
import argparse
import math
import os
import sys
import tempfile
import time
from datetime import datetime


# 添加项目根目录到Python路径
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from cli import load_run_config, run_tradeoff, _load_datasets
from config import TRADEOFF_VARIANTS
from network import build_preset, evaluate, init_model, train
from pruning import adjust_dropout, iterate_prune, prune_global_fraction
from reporting import (
    banding_ratio, connection_power_watts, count_flops, count_params, format_k,
    live_gap_is_empty,
)
from sparse_format import encode_model

CONFIG_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "configs")
CONFIG = os.path.join(CONFIG_DIR, "lenet300.ini")
LENET5_CONFIGS = {
    # 配置文件: (错误率上限, 训练分钟数上限)
    "lenet5_10k.ini": (0.025, 20),
    "lenet5.ini": (0.015, 120),
}


def make_result(name, target, actual, passed, message=""):
    return {
        "name": name,
        "target": target,
        "actual": actual,
        "passed": bool(passed),
        "message": message,
        "time": datetime.now().strftime("%Y-%m-%d %H:%M:%S"),
    }


def data_overrides(mnist_dir, out_dir, seed=None):
    files = {
        "train_images": "train-images-idx3-ubyte", "train_labels": "train-labels-idx1-ubyte",
        "test_images": "t10k-images-idx3-ubyte", "test_labels": "t10k-labels-idx1-ubyte",
    }
    overrides = {"data": {key: os.path.join(mnist_dir, name) for key, name in files.items()},
                 "run": {"out_dir": out_dir}}
    if seed is not None:
        overrides["run"]["seed"] = seed
    return overrides


# ---------------------------------------------------------------------------
# 不需要数据的检查
# ---------------------------------------------------------------------------

def check_static():
    results = []
    value = adjust_dropout(0.5, 100_000, 9_000)
    results.append(make_result("dropout 调整精确值", "0.15", repr(value), value == 0.15))

    lenet300 = build_preset("lenet-300-100")
    lenet5 = build_preset("lenet-5")
    rows = [format_k(count_params(lenet300)[k]) for k in ("fc1", "total")]
    rows += [format_k(count_flops(lenet300)[k]) for k in ("fc1", "total")]
    rows += [format_k(count_flops(lenet5)["conv1"]), format_k(count_params(lenet5)["total"]),
             format_k(count_flops(lenet5)["total"])]
    expected = ["235K", "266K", "470K", "532K", "576K", "431K", "4586K"]
    results.append(make_result("参数量/FLOP 表格", " ".join(expected), " ".join(rows), rows == expected))

    watts = connection_power_watts(1e9, 20)
    results.append(make_result("能耗示例（20Hz, 10亿连接, DRAM）", "12.8 W", f"{watts:.3f} W",
                               math.isclose(watts, 12.8)))
    return results


# ---------------------------------------------------------------------------
# 需要真实 MNIST 的检查
# ---------------------------------------------------------------------------

def check_lenet300(mnist_dir, out_dir):
    results = []
    cfg = load_run_config(CONFIG, data_overrides(mnist_dir, out_dir))
    train_set, test_set = _load_datasets(cfg)

    start = time.time()
    baseline = train(init_model(build_preset(cfg.run.arch), cfg.run.seed), train_set, cfg.train_config())
    minutes = (time.time() - start) / 60
    base_error = evaluate(baseline, test_set)
    results.append(make_result("LeNet-300-100 基线", "错误率 ≤ 2.2%，≤ 30 分钟",
                               f"{base_error * 100:.2f}%，{minutes:.1f} 分钟",
                               base_error <= 0.022 and minutes <= 30))

    half = prune_global_fraction(baseline, 0.5)
    drop = evaluate(half, test_set) - base_error
    results.append(make_result("剪掉 50% 不重训练", "错误率上升 ≤ 0.3pp", f"{drop * 100:.2f}pp", drop <= 0.003))

    final, record = iterate_prune(baseline, train_set, cfg.prune_config(len(baseline.layer_names())),
                                  evalset=test_set)
    iterations = record.iterations()
    remaining = record.total_remaining_pct(iterations[-1]) if iterations else 100.0
    final_error = evaluate(final, test_set)
    results.append(make_result("迭代剪枝压缩", "剩余权重 ≤ 9%，错误率 ≤ 基线 + 0.2pp",
                               f"{remaining:.2f}%，{final_error * 100:.2f}%（基线 {base_error * 100:.2f}%）",
                               remaining <= 9.0 and final_error <= base_error + 0.002,
                               "提前停止" if record.stopped_early else ""))

    sparse, report = encode_model(final)
    dense, _ = encode_model(final, dense=True)
    ratio = len(sparse) / len(dense) * 100
    results.append(make_result("稀疏文件大小", "≤ 稠密检查点的 12%，索引开销 15.6%",
                               f"{ratio:.1f}%，{report.index_overhead_pct:.1f}%",
                               ratio <= 12.0 and round(report.index_overhead_pct, 1) == 15.6))

    fc1 = final.params["fc1"]
    ratio = banding_ratio(fc1.mask)
    results.append(make_result("fc1 掩码条带", "中间三分之一密度 ≥ 1.5 × 两侧", f"{ratio:.2f}", ratio >= 1.5))

    thresholds = [row.threshold for row in record.rows if row.layer == "fc1"]
    if thresholds:
        t = thresholds[-1]
        gap = live_gap_is_empty(fc1, t / 2)
        results.append(make_result("fc1 权重双峰", f"(−{t / 2:.4f}, {t / 2:.4f}) 内无权重",
                                   "空" if gap else "有权重", gap))
    return results


def check_lenet5(mnist_dir, out_dir, config_name="lenet5_10k.ini"):
    """LeNet-5 基线训练时间与错误率，以及迭代剪枝后的剩余权重与错误率"""
    max_error, max_minutes = LENET5_CONFIGS[config_name]
    cfg = load_run_config(os.path.join(CONFIG_DIR, config_name), data_overrides(mnist_dir, out_dir))
    train_set, test_set = _load_datasets(cfg)

    start = time.time()
    baseline = train(init_model(build_preset(cfg.run.arch), cfg.run.seed), train_set, cfg.train_config())
    minutes = (time.time() - start) / 60
    base_error = evaluate(baseline, test_set)
    results = [make_result(f"LeNet-5 基线（{config_name}）",
                           f"错误率 ≤ {max_error * 100:.1f}%，≤ {max_minutes} 分钟",
                           f"{base_error * 100:.2f}%，{minutes:.1f} 分钟",
                           base_error <= max_error and minutes <= max_minutes)]

    final, record = iterate_prune(baseline, train_set, cfg.prune_config(len(baseline.layer_names())),
                                  evalset=test_set)
    iterations = record.iterations()
    remaining = record.total_remaining_pct(iterations[-1]) if iterations else 100.0
    final_error = evaluate(final, test_set)
    results.append(make_result(f"LeNet-5 迭代剪枝（{config_name}）", "剩余权重 ≤ 9%，错误率 ≤ 基线 + 0.2pp",
                               f"剩余权重 {remaining:.2f}%，{final_error * 100:.2f}%（基线 {base_error * 100:.2f}%）",
                               remaining <= 9.0 and final_error <= base_error + 0.002,
                               "提前停止" if record.stopped_early else ""))
    return results


def check_regularization(mnist_dir, out_dir, seeds=(1, 2, 3)):
    """三个种子下比较 L1 / L2：不重训练时 L1 更好，重训练后 L2 更好（多数成立即可）"""
    no_retrain_wins = retrain_wins = 0
    for seed in seeds:
        cfg = load_run_config(CONFIG, data_overrides(mnist_dir, out_dir, seed))
        train_set, test_set = _load_datasets(cfg)
        points = run_tradeoff(cfg, train_set, test_set, [0.7, 0.9])
        delta = {(p.variant, round(p.parameters_pruned_pct)): p.accuracy_delta for p in points}
        l1_70 = delta[(TRADEOFF_VARIANTS["l1_no_retrain"], 70)]
        l2_70 = delta[(TRADEOFF_VARIANTS["l2_no_retrain"], 70)]
        l1_90 = delta[(TRADEOFF_VARIANTS["l1_retrain"], 90)]
        l2_90 = delta[(TRADEOFF_VARIANTS["l2_retrain"], 90)]
        no_retrain_wins += l1_70 >= l2_70
        retrain_wins += l2_90 >= l1_90
    need = len(seeds) // 2 + 1
    return [
        make_result("70% 不重训练：L1 ≥ L2", f"≥ {need}/{len(seeds)} 个种子",
                    f"{no_retrain_wins}/{len(seeds)}", no_retrain_wins >= need),
        make_result("90% 重训练后：L2 ≥ L1", f"≥ {need}/{len(seeds)} 个种子",
                    f"{retrain_wins}/{len(seeds)}", retrain_wins >= need),
    ]


def generate_acceptance_report(results, output_path):
    """
    生成验收报告

    Args:
        results: 检查结果列表
        output_path: 报告输出路径
    """
    total = len(results)
    passed = sum(1 for r in results if r["passed"])
    rate = passed / total * 100 if total else 0

    content = f"""# 验收测试报告

## 测试环境
- **测试时间**: {datetime.now().strftime("%Y-%m-%d %H:%M:%S")}
- **测试脚本**: run_acceptance.py
- **配置文件**: configs/lenet300.ini, configs/lenet5_10k.ini（--full 时另有 configs/lenet5.ini）

## 测试统计
| 统计项 | 数量 | 比例 |
|--------|------|------|
| 检查项 | {total} | 100% |
| 通过 | {passed} | {rate:.1f}% |
| 未通过 | {total - passed} | {100 - rate:.1f}% |

## 检查结果
| 检查项 | 目标 | 实际 | 状态 | 备注 |
|--------|------|------|------|------|
"""
    for r in results:
        status = "✅ 通过" if r["passed"] else "❌ 未通过"
        content += f"| {r['name']} | {r['target']} | {r['actual']} | {status} | {r['message']} |\n"

    content += "\n## 测试结论\n\n"
    content += f"- **通过率**: {rate:.1f}%\n"
    content += f"- **测试结果**: {'全部通过' if passed == total else '部分通过'}\n"

    with open(output_path, "w", encoding="utf-8") as f:
        f.write(content)
    print(f"验收报告已生成: {output_path}")
    return content


def main(argv=None):
    parser = argparse.ArgumentParser(description="验收测试")
    parser.add_argument("--mnist-dir", default=os.environ.get("MNIST_DIR"), help="MNIST IDX 文件目录")
    parser.add_argument("--full", action="store_true", help="运行完整 LeNet-5 与多种子的正则化对比")
    parser.add_argument("--report", default="acceptance_report.md", help="报告路径")
    args = parser.parse_args(argv)

    print("=" * 60)
    print("神经网络剪枝工具 验收测试")
    print("=" * 60)

    print("\n1. 静态检查...")
    results = check_static()

    if args.mnist_dir:
        with tempfile.TemporaryDirectory() as out_dir:
            print("\n2. LeNet-300-100 训练与剪枝...")
            results += check_lenet300(args.mnist_dir, out_dir)
            print("\n3. LeNet-5 训练与剪枝...")
            results += check_lenet5(args.mnist_dir, out_dir)
            if args.full:
                results += check_lenet5(args.mnist_dir, out_dir, "lenet5.ini")
                print("\n   正则化对比...")
                results += check_regularization(args.mnist_dir, out_dir)
    else:
        print("\n未指定 MNIST 目录（--mnist-dir 或 MNIST_DIR），跳过需要数据的检查")

    for r in results:
        print(f"   {'✓' if r['passed'] else '✗'} {r['name']}: {r['actual']}")

    print("\n4. 生成验收报告...")
    generate_acceptance_report(results, args.report)
    return 0 if all(r["passed"] for r in results) else 1


if __name__ == "__main__":
    sys.exit(main())
