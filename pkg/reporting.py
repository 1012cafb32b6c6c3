"""
报告模块
参数量/FLOP 统计、激活稀疏度、表格式汇总、权重直方图、稀疏位图、权衡曲线与能耗估计
"""
import logging
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd
from PIL import Image

from config import INPUT_SHAPE, REPORT_DEFAULTS
from errors import ShapeError
from models import EnergyModel, LayerSpec, LayerStats, MaskedParam, TradeoffPoint
from network import Dataset, Model, forward, validate_specs
from utils import atomic_output, atomic_write_text

logger = logging.getLogger(__name__)

TOTAL = "total"


# ---------------------------------------------------------------------------
# 参数量与 FLOP
# ---------------------------------------------------------------------------

def layer_geometry(specs: List[LayerSpec], input_shape=INPUT_SHAPE) -> List[dict]:
    """逐层形状（不含批维）"""
    return [{"name": spec.name, "kind": spec.kind, "in_shape": shape_in, "out_shape": shape_out}
            for spec, (shape_in, shape_out) in zip(specs, validate_specs(specs, input_shape))]


def count_params(specs: List[LayerSpec]) -> Dict[str, int]:
    """
    每层参数量（权重 + 偏置）及合计

    全连接: fan_in·fan_out + fan_out；卷积: F·C·k·k + F
    """
    counts = {spec.name: int(np.prod(spec.weight_shape)) + spec.bias_size
              for spec in specs if spec.is_weighted}
    counts[TOTAL] = sum(counts.values())
    return counts


def count_flops(specs: List[LayerSpec], input_shape=INPUT_SHAPE) -> Dict[str, int]:
    """
    每层 FLOP（1 次乘加 = 2 FLOP）及合计，池化层不计

    全连接: 2·fan_in·fan_out；卷积: 2·k²·C·H'·W'·F
    """
    counts = {}
    for geo, spec in zip(layer_geometry(specs, input_shape), specs):
        if spec.kind == "fully_connected":
            counts[spec.name] = 2 * spec.fan_in * spec.fan_out
        elif spec.kind == "conv":
            _, out_h, out_w = geo["out_shape"]
            counts[spec.name] = 2 * spec.kernel ** 2 * spec.in_channels * out_h * out_w * spec.filters
    counts[TOTAL] = sum(counts.values())
    return counts


def format_k(n: int) -> str:
    """表格式的 K 取整：≥1000 取整千，小于 1000 保留一位小数（520 → 0.5K）"""
    if n >= 1000:
        return f"{n // 1000}K"
    return f"{n / 1000:.1f}K"


# ---------------------------------------------------------------------------
# 激活稀疏度与剪枝后的 FLOP
# ---------------------------------------------------------------------------

def _count_nonzero(model: Model, dataset: Dataset, n: int, batch_size: int,
                   deterministic: bool) -> Tuple[Dict[str, int], Dict[str, int], Dict[str, int]]:
    """逐层统计输出与输入中的非零个数，以及每层输入的元素总数"""
    outputs: Dict[str, int] = {}
    inputs: Dict[str, int] = {}
    input_sizes: Dict[str, int] = {}
    for start in range(0, n, batch_size):
        batch = dataset.images[start:min(start + batch_size, n)]
        _, record = forward(model, batch, "eval", deterministic=deterministic)
        for trace in record.traces:
            if not trace.spec.is_weighted:
                continue
            name = trace.spec.name
            outputs[name] = outputs.get(name, 0) + int(np.count_nonzero(trace.activations))
            inputs[name] = inputs.get(name, 0) + int(np.count_nonzero(trace.inputs))
            input_sizes[name] = input_sizes.get(name, 0) + int(trace.inputs.size)
    return outputs, inputs, input_sizes


def measure_act_pct(model: Model, dataset: Dataset, n_samples: int = REPORT_DEFAULTS["act_samples"],
                    batch_size: int = 1000, deterministic: bool = True) -> Dict[str, float]:
    """
    每个带权重层输出中非零激活的平均百分比

    卷积层在池化之前统计。输出层（softmax 之前）按 100% 计。
    """
    if n_samples < 1:
        raise ValueError(f"样本数必须 >= 1: {n_samples}")
    names = model.layer_names()
    n = min(n_samples, len(dataset))
    nonzero, _, _ = _count_nonzero(model, dataset, n, batch_size, deterministic)
    result = {}
    for spec in model.weighted_specs()[:-1]:
        per_sample = int(np.prod(_output_shape(model, spec.name)))
        result[spec.name] = 100.0 * nonzero.get(spec.name, 0) / (per_sample * n) if n else 0.0
    result[names[-1]] = 100.0
    return result


def measure_input_act_pct(model: Model, dataset: Dataset, n_samples: int = REPORT_DEFAULTS["act_samples"],
                          batch_size: int = 1000, deterministic: bool = True) -> Dict[str, float]:
    """
    每个带权重层实际输入（池化之后）中非零激活的百分比

    第一层的输入是图像，按 100% 计。
    """
    if n_samples < 1:
        raise ValueError(f"样本数必须 >= 1: {n_samples}")
    names = model.layer_names()
    n = min(n_samples, len(dataset))
    _, nonzero, sizes = _count_nonzero(model, dataset, n, batch_size, deterministic)
    result = {name: (100.0 * nonzero[name] / sizes[name] if sizes.get(name) else 0.0) for name in names[1:]}
    result[names[0]] = 100.0
    return {name: result[name] for name in names}


def _output_shape(model: Model, name: str) -> tuple:
    for geo in layer_geometry(model.specs, model.input_shape):
        if geo["name"] == name:
            return geo["out_shape"]
    raise KeyError(name)


def pruned_flop_pct(weights_pct: float, input_act_pct: float) -> float:
    """剪枝后的 FLOP 百分比 = 权重保留比例 × 输入激活密度"""
    for value in (weights_pct, input_act_pct):
        if not 0.0 <= value <= 100.0:
            raise ValueError(f"百分比必须位于 [0, 100]: {value}")
    return weights_pct * input_act_pct / 100.0


def weighted_pct(totals: Iterable[float], pcts: Iterable[float]) -> float:
    """按各层总量加权的合计百分比"""
    totals = np.asarray(list(totals), dtype=np.float64)
    pcts = np.asarray(list(pcts), dtype=np.float64)
    return float((totals * pcts).sum() / totals.sum()) if totals.sum() else 0.0


def layer_stats(model: Model, dataset: Optional[Dataset] = None,
                n_samples: int = REPORT_DEFAULTS["act_samples"],
                deterministic: bool = True) -> List[LayerStats]:
    """
    表格式的逐层统计（含合计行）

    Args:
        model: 模型
        dataset: 测量激活稀疏度的数据集；为 None 时激活按 100% 计
        n_samples: 测量激活使用的样本数

    Returns:
        每个带权重层一行，最后一行为合计；FLOP% 按该层实际输入（池化之后）的激活密度计算
    """
    params = count_params(model.specs)
    flops = count_flops(model.specs, model.input_shape)
    names = model.layer_names()
    if dataset is not None:
        act = measure_act_pct(model, dataset, n_samples, deterministic=deterministic)
        input_act = measure_input_act_pct(model, dataset, n_samples, deterministic=deterministic)
    else:
        act = {name: 100.0 for name in names}
        input_act = dict(act)

    rows = []
    for name in names:
        p = model.params[name]
        weights_pct = 100.0 * p.live_count / p.total
        rows.append(LayerStats(
            layer=name, weights_total=params[name], flops_total=flops[name], act_pct=act[name],
            weights_pct=weights_pct, flops_pct=pruned_flop_pct(weights_pct, input_act[name]),
        ))

    rows.append(LayerStats(
        layer=TOTAL, weights_total=params[TOTAL], flops_total=flops[TOTAL],
        weights_pct=weighted_pct([r.weights_total for r in rows], [r.weights_pct for r in rows]),
        flops_pct=weighted_pct([r.flops_total for r in rows], [r.flops_pct for r in rows]),
    ))
    return rows


def stats_to_frame(stats: List[LayerStats]) -> pd.DataFrame:
    return pd.DataFrame([row.model_dump() for row in stats])


def summary_table(stats: List[LayerStats]) -> str:
    """表格式文本：计数用 K 取整，百分比取整"""
    def pct(value):
        return "" if value is None else f"{value:.0f}%"

    frame = pd.DataFrame([{
        "Layer": row.layer.capitalize() if row.layer == TOTAL else row.layer,
        "Weights": format_k(row.weights_total),
        "FLOP": format_k(row.flops_total),
        "Act%": pct(row.act_pct),
        "Weights%": pct(row.weights_pct),
        "FLOP%": pct(row.flops_pct),
    } for row in stats])
    return frame.to_string(index=False)


def export_stats(stats: List[LayerStats], path: str):
    """导出逐层统计：.xlsx 使用 openpyxl，其余写 CSV"""
    frame = stats_to_frame(stats)
    with atomic_output(path) as tmp:
        if path.lower().endswith(".xlsx"):
            frame.to_excel(tmp, index=False, sheet_name="layer_stats", engine="openpyxl")
        else:
            frame.to_csv(tmp, index=False)


def compression_summary(baseline: Model, pruned: Model, error_before: float, error_after: float) -> dict:
    """
    压缩汇总：错误率、参数量（存活权重 + 偏置）与压缩倍数
    """
    def live_params(model):
        return sum(p.live_count + p.bias.size for p in model.params.values())

    before = live_params(baseline)
    after = live_params(pruned)
    return {
        "error_before": error_before,
        "error_after": error_after,
        "params_before": before,
        "params_after": after,
        "compression": before / after if after else float("inf"),
    }


def write_report(path: str, stats: List[LayerStats], summary: Optional[dict] = None,
                 metadata: Optional[dict] = None):
    """纯文本报告：元数据 + 表格 + 压缩汇总"""
    lines = []
    for key, value in (metadata or {}).items():
        lines.append(f"{key}: {value}")
    if lines:
        lines.append("")
    lines.append(summary_table(stats))
    if summary:
        lines.append("")
        lines.append(f"错误率: {summary['error_before'] * 100:.2f}% -> {summary['error_after'] * 100:.2f}%")
        lines.append(f"参数量: {format_k(summary['params_before'])} -> {format_k(summary['params_after'])}"
                     f"（压缩 {summary['compression']:.1f}×）")
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# 稀疏位图与直方图
# ---------------------------------------------------------------------------

def sparsity_bitmap(p: MaskedParam, path: str) -> Tuple[int, int]:
    """
    把全连接层掩码保存为二值 PGM（P5）：存活连接为 255

    图像宽为输入维度、高为输出维度（fc1 为 784×300）。

    Returns:
        (宽, 高)
    """
    if p.mask.ndim != 2:
        raise ShapeError(f"只支持二维权重矩阵，实际形状 {p.mask.shape}")
    pixels = np.ascontiguousarray((p.mask.T * 255).astype(np.uint8))
    image = Image.fromarray(pixels)
    with atomic_output(path) as tmp:
        image.save(tmp, format="PPM")
    return image.size


def banding_ratio(mask: np.ndarray, band: int = REPORT_DEFAULTS["band_width"]) -> float:
    """
    位图条带程度：每个宽 band 的条带中间三分之一的掩码密度与两侧三分之一之比（对所有条带平均）

    mask 为 输入×输出 矩阵，每个条带对应输入图像的一行。
    """
    mask = np.asarray(mask)
    if mask.ndim != 2 or mask.shape[0] % band != 0:
        raise ShapeError(f"输入维度 {mask.shape[0] if mask.ndim else mask.shape} 不是条带宽度 {band} 的整数倍")
    density = mask.mean(axis=1).reshape(-1, band)
    third = band // 3
    middle = density[:, third:band - third]
    outer = np.concatenate([density[:, :third], density[:, band - third:]], axis=1)
    if outer.mean() == 0:
        return float("inf") if middle.mean() > 0 else 1.0
    return float(middle.mean() / outer.mean())


def weight_histogram(p: MaskedParam, bins: int = REPORT_DEFAULTS["histogram_bins"],
                     value_range: Optional[Tuple[float, float]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """存活权重的直方图，返回 (counts, edges)"""
    if bins < 1:
        raise ValueError(f"bins 必须 >= 1: {bins}")
    live = p.weights[p.mask == 1].astype(np.float64)
    return np.histogram(live, bins=bins, range=value_range)


def histogram_gap_is_empty(counts: np.ndarray, edges: np.ndarray, half_width: float) -> bool:
    """完全落在 (−half_width, half_width) 内的区间没有权重，且 0 的两侧都有权重

    只看完全落在区间内的柱；与区间部分重叠的边界柱需要用 live_gap_is_empty 检查。
    """
    left, right = edges[:-1], edges[1:]
    inside = (left >= -half_width) & (right <= half_width)
    negative = counts[right <= 0].sum()
    positive = counts[left >= 0].sum()
    return bool(counts[inside].sum() == 0 and negative > 0 and positive > 0)


def live_gap_is_empty(p: MaskedParam, half_width: float) -> bool:
    """存活权重中没有落在 (−half_width, half_width) 内的，且 0 的两侧都有权重"""
    live = p.weights[p.mask == 1].astype(np.float64)
    return bool(not np.any(np.abs(live) < half_width) and np.any(live < 0) and np.any(live > 0))


def histogram_to_frame(counts: np.ndarray, edges: np.ndarray) -> pd.DataFrame:
    return pd.DataFrame({"bin_left": edges[:-1], "bin_right": edges[1:], "count": counts})


def tradeoff_curve(points: Iterable[TradeoffPoint]) -> pd.DataFrame:
    """权衡曲线表：parameters_pruned_pct, accuracy_delta, variant"""
    frame = pd.DataFrame([point.model_dump() for point in points],
                         columns=["variant", "parameters_pruned_pct", "accuracy_delta"])
    return frame[["parameters_pruned_pct", "accuracy_delta", "variant"]]


# ---------------------------------------------------------------------------
# 能耗
# ---------------------------------------------------------------------------

def _memory_cost(energy: EnergyModel, storage: str) -> float:
    if storage not in ("sram", "dram"):
        raise ValueError(f"未知的存储类型: {storage}")
    return energy.sram if storage == "sram" else energy.dram


def estimate_energy(model: Model, storage: str = "dram", act_pct: Optional[Dict[str, float]] = None,
                    energy: Optional[EnergyModel] = None) -> Dict[str, float]:
    """
    单次推理能耗（皮焦）

    全连接层：每个存活权重一次访存 + 一次浮点乘 + 一次浮点加，乘以输入激活密度。
    卷积层：每个存活权重访存一次，乘加按输出位置计，乘以输入激活密度。

    Args:
        model: 模型
        storage: 权重存放位置 "sram" / "dram"
        act_pct: 每层输出激活百分比（measure_act_pct），缺省按 100%
        energy: 能耗表

    Returns:
        {"memory": ..., "compute": ..., "total": ...}
    """
    energy = energy or EnergyModel()
    memory_pj = _memory_cost(energy, storage)
    mac_pj = energy.float_mult + energy.float_add
    geometry = {geo["name"]: geo for geo in layer_geometry(model.specs, model.input_shape)}

    memory = compute = 0.0
    density = 1.0
    for spec in model.weighted_specs():
        live = model.params[spec.name].live_count
        if spec.kind == "fully_connected":
            memory += live * memory_pj * density
            compute += live * mac_pj * density
        else:
            _, out_h, out_w = geometry[spec.name]["out_shape"]
            memory += live * memory_pj
            compute += live * out_h * out_w * mac_pj * density
        if act_pct is not None:
            density = act_pct[spec.name] / 100.0
    return {"memory": memory, "compute": compute, "total": memory + compute}


def connection_power_watts(connections: float, rate_hz: float, storage: str = "dram",
                           energy: Optional[EnergyModel] = None) -> float:
    """每个连接每帧一次访存的功耗（瓦）：rate × connections × pJ"""
    return rate_hz * connections * _memory_cost(energy or EnergyModel(), storage) * 1e-12
