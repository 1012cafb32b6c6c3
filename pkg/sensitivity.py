"""
剪枝敏感度分析
逐层按比例剪枝（不重训练）得到精度曲线，并根据允许的精度下降给出每层的 quality 建议
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from errors import SensitivityError
from models import SensitivityCurve
from network import Dataset, Model, evaluate
from pruning import layer_std, rank_prune
from utils import validate_fraction_grid

logger = logging.getLogger(__name__)


def baseline_accuracy(model: Model, evalset: Dataset, deterministic: bool = True) -> float:
    return 1.0 - evaluate(model, evalset, deterministic=deterministic)


def _accuracy_at(model: Model, layer_id: str, fraction: float, evalset: Dataset,
                 deterministic: bool) -> float:
    """只剪 layer_id 一层后评估；其余层与原模型共用参数，原模型不被修改"""
    params = dict(model.params)
    params[layer_id] = rank_prune(model.params[layer_id], fraction)
    pruned = Model(model.specs, params, model.rng_seed, model.input_shape)
    return baseline_accuracy(pruned, evalset, deterministic)


def sweep_layer(model: Model, layer_id: str, fractions: List[float], evalset: Dataset,
                deterministic: bool = True, workers: int = 1) -> SensitivityCurve:
    """
    单层敏感度曲线

    Args:
        model: 已训练的模型（不会被修改）
        layer_id: 层名
        fractions: 严格递增、位于 [0, 1) 的剪枝比例
        evalset: 评估数据集
        deterministic: 是否使用固定求和顺序
        workers: 并行线程数，结果按输入顺序收集

    Returns:
        SensitivityCurve
    """
    if layer_id not in model.layer_names():
        raise SensitivityError(f"未知的层: {layer_id}，可选: {', '.join(model.layer_names())}")
    ok, msg = validate_fraction_grid(fractions)
    if not ok:
        raise SensitivityError(msg)

    def run(fraction):
        return _accuracy_at(model, layer_id, fraction, evalset, deterministic)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            accuracies = list(pool.map(run, fractions))
    else:
        accuracies = [run(f) for f in fractions]

    base = baseline_accuracy(model, evalset, deterministic)
    logger.info("层 %s 敏感度: 基线 %.4f, %s", layer_id, base,
                ", ".join(f"{f:.2f}->{a:.4f}" for f, a in zip(fractions, accuracies)))
    return SensitivityCurve(layer=layer_id, baseline_accuracy=base,
                            points=[(float(f), float(a)) for f, a in zip(fractions, accuracies)])


def sweep_all(model: Model, fractions: List[float], evalset: Dataset, deterministic: bool = True,
              workers: int = 1, layers: Optional[List[str]] = None) -> List[SensitivityCurve]:
    """对所有（或指定的）带权重层做敏感度分析"""
    layers = layers or model.layer_names()
    return [sweep_layer(model, name, fractions, evalset, deterministic, workers) for name in layers]


def curves_to_frame(curves: List[SensitivityCurve]) -> pd.DataFrame:
    """曲线 -> 表格 (layer, fraction, accuracy)；比例 0 处补上基线精度"""
    rows = []
    for curve in curves:
        if not curve.points or curve.points[0][0] > 0:
            rows.append({"layer": curve.layer, "fraction": 0.0, "accuracy": curve.baseline_accuracy})
        rows.extend({"layer": curve.layer, "fraction": f, "accuracy": a} for f, a in curve.points)
    return pd.DataFrame(rows, columns=["layer", "fraction", "accuracy"])


def max_fraction_within(curve: SensitivityCurve, drop_budget: float) -> float:
    """
    精度下降不超过 drop_budget 的最大剪枝比例

    从比例 0（基线）开始沿曲线前进，在第一次超出预算的区间内线性插值。
    """
    if not curve.points:
        raise SensitivityError(f"层 {curve.layer} 的敏感度曲线为空")
    points = list(curve.points)
    if points[0][0] > 0:
        points.insert(0, (0.0, curve.baseline_accuracy))

    chosen = 0.0
    prev_f, prev_drop = 0.0, 0.0
    for fraction, accuracy in points:
        drop = curve.baseline_accuracy - accuracy
        if drop > drop_budget:
            if prev_drop <= drop_budget and drop > prev_drop:
                chosen = prev_f + (drop_budget - prev_drop) / (drop - prev_drop) * (fraction - prev_f)
            break
        chosen = fraction
        prev_f, prev_drop = fraction, drop
    return float(chosen)


def fraction_to_quality(model: Model, layer_id: str, fraction: float) -> float:
    """把剪枝比例换算成 quality：|w| 的 fraction 分位数 / 存活权重标准差"""
    p = model.params[layer_id]
    threshold = float(np.quantile(np.abs(p.weights).astype(np.float64).ravel(), fraction))
    return threshold / layer_std(p)


def suggest_qualities(model: Model, curves: List[SensitivityCurve], drop_budget: float) -> Dict[str, dict]:
    """
    根据精度下降预算给出每层的 quality

    Args:
        model: 做敏感度分析时使用的模型
        curves: 每层的敏感度曲线
        drop_budget: 允许的精度下降（绝对值，例如 0.005 表示 0.5 个百分点）

    Returns:
        层名 -> {"fraction": 最大剪枝比例, "quality": 对应的 q}
    """
    if drop_budget <= 0:
        raise SensitivityError(f"精度下降预算必须为正: {drop_budget}")
    suggestions = {}
    for curve in curves:
        fraction = max_fraction_within(curve, drop_budget)
        quality = fraction_to_quality(model, curve.layer, fraction)
        suggestions[curve.layer] = {"fraction": fraction, "quality": quality}
        logger.info("层 %s: 建议剪枝比例 %.3f, quality %.4f", curve.layer, fraction, quality)
    return suggestions
