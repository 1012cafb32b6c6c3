"""
SPNN 稀疏模型格式
相对索引（间隔）编码、位打包、模型导出/导入以及稠密检查点读写

字节布局见 SPNN_FORMAT.md，所有整数与浮点均为小端序。
"""
import json
import logging
import math
import struct
import zlib
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from config import SPARSE_FORMAT_CONFIG
from errors import CheckpointError, SparseFormatError
from models import LayerSpec, LayerStorage, MaskedParam, SparseLayerRecord, StorageReport, TrainingState
from network import Model, validate_specs
from utils import atomic_write_bytes, validate_index_bits

logger = logging.getLogger(__name__)

MAGIC = SPARSE_FORMAT_CONFIG["magic"]
VERSION = SPARSE_FORMAT_CONFIG["version"]
FLAG_DENSE = SPARSE_FORMAT_CONFIG["flag_dense"]
KIND_CODES = SPARSE_FORMAT_CONFIG["kind_codes"]
KIND_NAMES = {code: kind for kind, code in KIND_CODES.items()}

# magic, version, flags, epoch, lr, arch_len
_HEADER = struct.Struct("<4sHHIfI")
_LAYER_COUNT = struct.Struct("<H")
_LAYER_TAIL = struct.Struct("<IBI")   # entry_count, index_bits, bias_count
_CRC = struct.Struct("<I")


# ---------------------------------------------------------------------------
# 位打包
# ---------------------------------------------------------------------------

def pack_bits(values, bits: int) -> bytes:
    """
    把无符号整数按固定位宽打包，低位在前（LSB-first），末尾补零到整字节

    Args:
        values: 非负整数序列，每个 < 2^bits
        bits: 位宽
    """
    values = np.asarray(values, dtype=np.int64).ravel()
    if values.size and (values.min() < 0 or values.max() >= (1 << bits)):
        raise SparseFormatError(f"数值超出 {bits} 位范围")
    bit_matrix = ((values[:, None] >> np.arange(bits)) & 1).astype(np.uint8)
    return np.packbits(bit_matrix.ravel(), bitorder="little").tobytes()


def unpack_bits(data: bytes, count: int, bits: int) -> np.ndarray:
    """pack_bits 的逆操作"""
    needed = math.ceil(count * bits / 8)
    if len(data) < needed:
        raise SparseFormatError(f"位流被截断: 需要 {needed} 字节，实际 {len(data)} 字节")
    flat = np.unpackbits(np.frombuffer(data[:needed], dtype=np.uint8), bitorder="little")
    bit_matrix = flat[:count * bits].reshape(count, bits).astype(np.int64)
    return (bit_matrix << np.arange(bits)).sum(axis=1)


# ---------------------------------------------------------------------------
# 相对索引
# ---------------------------------------------------------------------------

def encode_relative(positions, values, index_bits: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    绝对位置 -> (间隔流, 数值流)

    第一个间隔从位置 −1 算起。间隔超过 G_max = 2^bits − 1 时插入
    (G_max, 0.0) 填充项，余下的间隔继续编码。
    """
    positions = np.asarray(positions, dtype=np.int64).ravel()
    values = np.asarray(values, dtype=np.float32).ravel()
    if positions.shape != values.shape:
        raise SparseFormatError(f"位置个数 {positions.size} 与数值个数 {values.size} 不一致")
    if positions.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.float32)
    if positions[0] < 0 or np.any(np.diff(positions) <= 0):
        raise SparseFormatError("位置必须为非负且严格递增")
    if not np.all(np.isfinite(values)):
        raise SparseFormatError("数值必须是有限浮点数")

    g_max = (1 << index_bits) - 1
    raw = np.diff(np.concatenate([[-1], positions]))
    fillers = (raw - 1) // g_max
    last = np.cumsum(fillers + 1) - 1
    gaps = np.full(int(last[-1]) + 1, g_max, dtype=np.int64)
    gaps[last] = raw - fillers * g_max
    stream = np.zeros(gaps.size, dtype=np.float32)
    stream[last] = values
    return gaps, stream


def decode_relative(gaps, values, length: int) -> np.ndarray:
    """(间隔流, 数值流) -> 长度为 length 的稠密数组；填充项落在值为 0 的位置上"""
    gaps = np.asarray(gaps, dtype=np.int64).ravel()
    values = np.asarray(values, dtype=np.float32).ravel()
    if gaps.size != values.size:
        raise SparseFormatError(f"间隔流 {gaps.size} 项与数值流 {values.size} 项不一致（流被截断）")
    dense = np.zeros(length, dtype=np.float32)
    if gaps.size == 0:
        return dense
    if gaps.min() < 1:
        raise SparseFormatError("间隔必须 >= 1")
    positions = np.cumsum(gaps) - 1
    if positions[-1] >= length:
        raise SparseFormatError(f"解码位置 {positions[-1]} 超出长度 {length}")
    dense[positions] = values
    return dense


def default_index_bits(kind: str, override: Optional[int] = None) -> int:
    """全连接层 5 位，卷积层 8 位"""
    bits = override if override is not None else SPARSE_FORMAT_CONFIG["index_bits"][kind]
    ok, msg = validate_index_bits(bits)
    if not ok:
        raise SparseFormatError(msg)
    return bits


def encode_layer(spec: LayerSpec, p: MaskedParam, index_bits: Optional[int] = None) -> SparseLayerRecord:
    """一层 -> 相对索引记录（只存有效权重中的非零项）"""
    bits = default_index_bits(spec.kind, index_bits)
    flat = p.effective_weights().ravel()
    positions = np.flatnonzero(flat)
    gaps, values = encode_relative(positions, flat[positions], bits)
    return SparseLayerRecord(name=spec.name, kind=spec.kind, shape=p.weights.shape,
                             index_bits=bits, gaps=gaps, values=values, bias=p.bias.copy())


def decode_layer(record: SparseLayerRecord) -> MaskedParam:
    """相对索引记录 -> MaskedParam，掩码取解码后非零的位置"""
    dense = decode_relative(record.gaps, record.values, int(np.prod(record.shape)))
    dense = dense.reshape(record.shape)
    return MaskedParam(weights=dense, mask=(dense != 0).astype(np.float32), bias=record.bias)


# ---------------------------------------------------------------------------
# 容器
# ---------------------------------------------------------------------------

def architecture_json(model: Model) -> bytes:
    """规范化的结构描述（键排序、紧凑分隔符）"""
    arch = {
        "input_shape": list(model.input_shape),
        "layers": [spec.model_dump(exclude_none=True) for spec in model.specs],
        "seed": model.rng_seed,
    }
    return json.dumps(arch, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _layer_header(kind: str, shape, entries: int, bits: int, bias_count: int) -> bytes:
    return (struct.pack("<BB", KIND_CODES[kind], len(shape))
            + struct.pack(f"<{len(shape)}I", *shape)
            + _LAYER_TAIL.pack(entries, bits, bias_count))


def _f32(values) -> bytes:
    return np.asarray(values, dtype="<f4").tobytes()


def encode_model(model: Model, state: Optional[TrainingState] = None, dense: bool = False,
                 index_bits: Optional[int] = None) -> Tuple[bytes, StorageReport]:
    """
    把模型编码为 SPNN 字节串

    Args:
        model: 模型
        state: 训练状态（epoch, lr），写入文件头
        dense: 稠密模式（检查点）：保存全部权重和掩码位图
        index_bits: 覆盖按层类型决定的索引位宽

    Returns:
        (文件内容, 存储报告)
    """
    state = state or TrainingState()
    arch = architecture_json(model)
    head = _HEADER.pack(MAGIC, VERSION, FLAG_DENSE if dense else 0, state.epoch, state.lr, len(arch))
    specs = model.weighted_specs()
    parts = [head, arch, _LAYER_COUNT.pack(len(specs))]
    storages: List[LayerStorage] = []

    for spec in specs:
        p = model.params[spec.name]
        if dense:
            header = _layer_header(spec.kind, p.weights.shape, p.total, 0, p.bias.size)
            mask_bits = np.packbits(p.mask.ravel().astype(np.uint8), bitorder="little").tobytes()
            body = [_f32(p.weights.ravel()), mask_bits, _f32(p.bias)]
            entries, bits, fillers, value_bytes, index_bytes = p.total, 0, 0, 4 * p.total, len(mask_bits)
        else:
            record = encode_layer(spec, p, index_bits)
            header = _layer_header(spec.kind, record.shape, record.entries, record.index_bits, p.bias.size)
            packed = pack_bits(record.gaps, record.index_bits)
            body = [packed, _f32(record.values), _f32(record.bias)]
            entries, bits, fillers = record.entries, record.index_bits, record.fillers
            value_bytes, index_bytes = 4 * record.entries, len(packed)
        parts.append(header)
        parts.extend(body)
        storages.append(LayerStorage(
            layer=spec.name, kind=spec.kind, index_bits=bits, weights_total=p.total,
            entries=entries, fillers=fillers, dense_bytes=4 * (p.total + p.bias.size),
            value_bytes=value_bytes, index_bytes=index_bytes, bias_bytes=4 * p.bias.size,
            header_bytes=len(header),
        ))

    payload = b"".join(parts)
    data = payload + _CRC.pack(zlib.crc32(payload) & 0xFFFFFFFF)
    container = _HEADER.size + len(arch) + _LAYER_COUNT.size + _CRC.size
    report = StorageReport(layers=storages, container_header_bytes=container, file_bytes=len(data))
    return data, report


class _Reader:
    """顺序读取字节流，越界即报稀疏流错误"""

    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise SparseFormatError(f"数据在偏移 {self.offset} 处被截断（还需要 {size} 字节）")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: struct.Struct):
        return fmt.unpack(self.take(fmt.size))

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32)


def decode_model(data: bytes) -> Tuple[Model, TrainingState, bool]:
    """
    解析 SPNN 字节串

    Returns:
        (模型, 训练状态, 是否为稠密模式)
    """
    if len(data) < _HEADER.size + _LAYER_COUNT.size + _CRC.size:
        raise CheckpointError(f"文件过短（{len(data)} 字节），不是有效的 SPNN 文件")
    magic, version, flags, epoch, lr, arch_len = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"魔数错误: {magic!r}（应为 {MAGIC!r}）")
    if version != VERSION:
        raise CheckpointError(f"不支持的格式版本: {version}")
    payload, (crc,) = data[:-_CRC.size], _CRC.unpack(data[-_CRC.size:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CheckpointError("CRC32 校验失败，文件已损坏")

    reader = _Reader(payload)
    reader.take(_HEADER.size)
    try:
        arch = json.loads(reader.take(arch_len).decode("utf-8"))
        specs = [LayerSpec(**layer) for layer in arch["layers"]]
        input_shape = tuple(arch["input_shape"])
        seed = int(arch["seed"])
        validate_specs(specs, input_shape)
    except SparseFormatError:
        raise
    except Exception as e:
        raise CheckpointError(f"结构描述无法解析: {e}") from e

    dense = bool(flags & FLAG_DENSE)
    weighted = [spec for spec in specs if spec.is_weighted]
    (layer_count,) = reader.unpack(_LAYER_COUNT)
    if layer_count != len(weighted):
        raise SparseFormatError(f"层数 {layer_count} 与结构描述中的 {len(weighted)} 个带权重层不一致")

    params = {}
    for spec in weighted:
        kind_code, ndim = struct.unpack("<BB", reader.take(2))
        shape = struct.unpack(f"<{ndim}I", reader.take(4 * ndim))
        entries, bits, bias_count = reader.unpack(_LAYER_TAIL)
        if KIND_NAMES.get(kind_code) != spec.kind or tuple(shape) != spec.weight_shape \
                or bias_count != spec.bias_size:
            raise SparseFormatError(f"层 {spec.name} 的头部与结构描述不一致")
        total = int(np.prod(shape))
        if dense:
            if entries != total:
                raise SparseFormatError(f"层 {spec.name}: 稠密模式下条目数 {entries} 应为 {total}")
            weights = reader.floats(total).reshape(shape)
            mask_bits = np.unpackbits(np.frombuffer(reader.take(math.ceil(total / 8)), dtype=np.uint8),
                                      bitorder="little")[:total]
            params[spec.name] = MaskedParam(weights=weights, mask=mask_bits.reshape(shape),
                                            bias=reader.floats(bias_count))
        else:
            gaps = unpack_bits(reader.take(math.ceil(entries * bits / 8)), entries, bits)
            record = SparseLayerRecord(name=spec.name, kind=spec.kind, shape=shape, index_bits=bits,
                                       gaps=gaps, values=reader.floats(entries),
                                       bias=reader.floats(bias_count))
            params[spec.name] = decode_layer(record)
    if reader.offset != len(payload):
        raise SparseFormatError(f"文件末尾有 {len(payload) - reader.offset} 字节多余数据")

    model = Model(specs, params, seed, input_shape)
    return model, TrainingState(epoch=epoch, lr=float(lr)), dense


def _read_file(path: str) -> bytes:
    try:
        with open(path, "rb") as f:
            return f.read()
    except OSError as e:
        raise CheckpointError(f"无法读取文件: {path}: {e}") from e


def storage_report(model: Model, index_bits: Optional[int] = None) -> StorageReport:
    """不写文件，只计算稀疏导出的存储开销"""
    return encode_model(model, index_bits=index_bits)[1]


def export_model(model: Model, path: str, index_bits: Optional[int] = None,
                 state: Optional[TrainingState] = None) -> StorageReport:
    """导出为稀疏 SPNN 文件，返回存储报告（file_bytes 等于写入的文件长度）"""
    data, report = encode_model(model, state, dense=False, index_bits=index_bits)
    atomic_write_bytes(path, data)
    logger.info("导出稀疏模型: %s（%d 字节，稠密 %d 字节）", path, report.file_bytes, report.dense_bytes)
    return report


def import_model(path: str) -> Model:
    """读取 SPNN 文件（稀疏或稠密模式均可）"""
    return decode_model(_read_file(path))[0]


def save_checkpoint(model: Model, path: str, state: Optional[TrainingState] = None) -> int:
    """保存稠密检查点（全部权重 + 掩码位图），返回文件字节数"""
    data, _ = encode_model(model, state, dense=True)
    atomic_write_bytes(path, data)
    logger.info("保存检查点: %s（%d 字节）", path, len(data))
    return len(data)


def load_checkpoint(path: str) -> Tuple[Model, TrainingState]:
    model, state, _ = decode_model(_read_file(path))
    return model, state


def storage_frame(report: StorageReport) -> pd.DataFrame:
    """存储报告 -> 表格（每层一行 + 合计行）"""
    rows = []
    for layer in report.layers:
        row = layer.model_dump()
        row.update(sparse_bytes=layer.sparse_bytes, index_overhead_pct=layer.index_overhead_pct)
        rows.append(row)
    rows.append({
        "layer": "total", "kind": "", "weights_total": sum(l.weights_total for l in report.layers),
        "entries": sum(l.entries for l in report.layers), "fillers": sum(l.fillers for l in report.layers),
        "dense_bytes": report.dense_bytes, "sparse_bytes": report.sparse_bytes,
        "header_bytes": report.container_header_bytes, "index_overhead_pct": report.index_overhead_pct,
        "file_bytes": report.file_bytes,
    })
    return pd.DataFrame(rows)
