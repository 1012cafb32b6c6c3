"""
网络模块
层/模型定义、MNIST IDX 数据读取、基线训练循环与评估
"""
import copy
import hashlib
import logging
import os
import struct
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from config import ARCHITECTURE_PRESETS, INPUT_SHAPE
from errors import (
    ArchitectureError, IdxCountMismatchError, IdxMagicError, IdxTruncatedError,
    ShapeError, TrainingDivergedError,
)
from models import DecayMode, LayerSpec, MaskedParam, TrainConfig
from tensor_engine import (
    FLOAT, Rng, as_tensor, conv2d_backward, conv2d_forward, conv_output_size,
    dropout_backward, dropout_forward, linear_forward, matmul, maxpool2d_backward,
    maxpool2d_forward, relu, relu_grad, sgd_step, softmax_cross_entropy,
)

logger = logging.getLogger(__name__)

_NO_DECAY = DecayMode(kind="none")

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049


# ---------------------------------------------------------------------------
# 数据集
# ---------------------------------------------------------------------------

class Dataset:
    """图像 n×1×28×28（取值 [0,1]）与整数标签"""

    def __init__(self, images: np.ndarray, labels: np.ndarray):
        images = np.asarray(images, dtype=FLOAT)
        labels = np.asarray(labels, dtype=np.int64)
        if images.shape[0] != labels.shape[0]:
            raise IdxCountMismatchError(f"图像数量 {images.shape[0]} 与标签数量 {labels.shape[0]} 不一致")
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise ValueError("像素值必须位于 [0, 1]")
        self.images = images
        self.labels = labels

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.images[indices], self.labels[indices])

    def limit(self, n: Optional[int]) -> "Dataset":
        """取前 n 个样本"""
        if n is None or n >= len(self):
            return self
        return self.subset(np.arange(n))

    def split(self, validation_size: int, seed: int) -> Tuple["Dataset", "Dataset"]:
        """
        按固定种子划分出验证集

        Returns:
            (剩余训练集, 验证集)
        """
        order = Rng(seed).permutation(len(self))
        validation_size = min(validation_size, len(self))
        return self.subset(np.sort(order[validation_size:])), self.subset(np.sort(order[:validation_size]))


def _read_exact(handle, size: int, path: str) -> bytes:
    data = handle.read(size)
    if len(data) != size:
        raise IdxTruncatedError(f"文件被截断: {path}（期望 {size} 字节，实际 {len(data)} 字节）")
    return data


def load_mnist_idx(images_path: str, labels_path: str) -> Dataset:
    """
    读取 IDX 格式的 MNIST 图像与标签

    Args:
        images_path: 图像文件（魔数 2051）
        labels_path: 标签文件（魔数 2049）

    Returns:
        Dataset，像素除以 255
    """
    for path in (images_path, labels_path):
        if not os.path.exists(path):
            raise FileNotFoundError(f"数据文件不存在: {path}")

    with open(images_path, "rb") as f:
        magic, count = struct.unpack(">II", _read_exact(f, 8, images_path))
        if magic != IDX_IMAGES_MAGIC:
            raise IdxMagicError(f"图像文件魔数错误: {magic}（应为 {IDX_IMAGES_MAGIC}）: {images_path}")
        rows, cols = struct.unpack(">II", _read_exact(f, 8, images_path))
        pixels = np.frombuffer(_read_exact(f, count * rows * cols, images_path), dtype=np.uint8)

    with open(labels_path, "rb") as f:
        magic, label_count = struct.unpack(">II", _read_exact(f, 8, labels_path))
        if magic != IDX_LABELS_MAGIC:
            raise IdxMagicError(f"标签文件魔数错误: {magic}（应为 {IDX_LABELS_MAGIC}）: {labels_path}")
        labels = np.frombuffer(_read_exact(f, label_count, labels_path), dtype=np.uint8)

    if label_count != count:
        raise IdxCountMismatchError(f"图像数量 {count} 与标签数量 {label_count} 不一致")

    images = pixels.reshape(count, 1, rows, cols).astype(FLOAT) / FLOAT(255.0)
    logger.info("读取 %d 个样本: %s", count, images_path)
    return Dataset(images, labels.astype(np.int64))


# ---------------------------------------------------------------------------
# 模型
# ---------------------------------------------------------------------------

class Model:
    """有序的层定义 + 每个带权重层的 MaskedParam"""

    def __init__(self, specs: List[LayerSpec], params: Dict[str, MaskedParam], rng_seed: int,
                 input_shape=INPUT_SHAPE):
        self.specs = list(specs)
        self.input_shape = tuple(input_shape)
        self.params = params
        self.rng_seed = int(rng_seed)
        self.history: List[dict] = []

    def weighted_specs(self) -> List[LayerSpec]:
        return [spec for spec in self.specs if spec.is_weighted]

    def layer_names(self) -> List[str]:
        return [spec.name for spec in self.weighted_specs()]

    def spec(self, name: str) -> LayerSpec:
        for spec in self.specs:
            if spec.name == name:
                return spec
        raise KeyError(f"未知的层: {name}")

    def clone(self) -> "Model":
        model = Model(self.specs, {name: p.clone() for name, p in self.params.items()},
                      self.rng_seed, self.input_shape)
        model.history = copy.deepcopy(self.history)
        return model

    def checksum(self) -> str:
        """所有参数与掩码的 SHA-256"""
        digest = hashlib.sha256()
        for name in self.layer_names():
            p = self.params[name]
            for array in (p.weights, p.mask, p.bias):
                digest.update(np.ascontiguousarray(array).tobytes())
        return digest.hexdigest()

    def total_weights(self) -> int:
        return sum(p.total for p in self.params.values())

    def live_weights(self) -> int:
        return sum(p.live_count for p in self.params.values())


def build_preset(name: str) -> List[LayerSpec]:
    """内置网络结构：lenet-300-100 / lenet-5"""
    if name not in ARCHITECTURE_PRESETS:
        raise ArchitectureError(f"未知的网络结构: {name}，可选: {', '.join(ARCHITECTURE_PRESETS)}")
    return [LayerSpec(**layer) for layer in ARCHITECTURE_PRESETS[name]]


def validate_specs(specs: List[LayerSpec], input_shape=INPUT_SHAPE) -> List[Tuple[tuple, tuple]]:
    """
    逐层推导形状，检查相邻层是否兼容

    Returns:
        每层的 (输入形状, 输出形状)，不含批维
    """
    if not specs:
        raise ArchitectureError("网络至少需要一层")
    shapes = []
    current = tuple(input_shape)
    for spec in specs:
        if spec.kind == "fully_connected":
            flat = int(np.prod(current))
            if spec.fan_in != flat:
                raise ArchitectureError(f"层 {spec.name}: fan_in={spec.fan_in} 与上一层输出 {flat} 不一致")
            out = (spec.fan_out,)
        else:
            if len(current) != 3:
                raise ArchitectureError(f"层 {spec.name}: 需要 C×H×W 输入，实际 {current}")
            c, h, w = current
            try:
                out_h = conv_output_size(h, spec.kernel, spec.stride)
                out_w = conv_output_size(w, spec.kernel, spec.stride)
            except ShapeError as e:
                raise ArchitectureError(f"层 {spec.name}: {e}") from e
            if spec.kind == "conv":
                if spec.in_channels != c:
                    raise ArchitectureError(f"层 {spec.name}: in_channels={spec.in_channels} 与输入通道 {c} 不一致")
                out = (spec.filters, out_h, out_w)
            else:
                out = (c, out_h, out_w)
        shapes.append((current, out))
        current = out
    if specs[-1].kind != "fully_connected":
        raise ArchitectureError("最后一层必须是全连接输出层")
    return shapes


def init_model(specs: List[LayerSpec], seed: int, input_shape=INPUT_SHAPE) -> Model:
    """
    初始化模型

    权重 ~ U(−a, a)，a = sqrt(6/(fan_in+fan_out))；偏置为0；掩码全1
    """
    validate_specs(specs, input_shape)
    rng = Rng(seed)
    params = {}
    for spec in specs:
        if not spec.is_weighted:
            continue
        if spec.kind == "fully_connected":
            fan_in, fan_out = spec.fan_in, spec.fan_out
        else:
            receptive = spec.kernel * spec.kernel
            fan_in, fan_out = spec.in_channels * receptive, spec.filters * receptive
        bound = float(np.sqrt(6.0 / (fan_in + fan_out)))
        weights = rng.uniform(-bound, bound, spec.weight_shape)
        params[spec.name] = MaskedParam(weights=weights, bias=np.zeros(spec.bias_size, dtype=FLOAT))
    return Model(specs, params, seed, input_shape)


class LayerTrace:
    """一层前向的中间结果，供反向传播与激活统计使用"""

    def __init__(self, spec: LayerSpec, inputs: np.ndarray):
        self.spec = spec
        self.inputs = inputs
        self.input_shape = inputs.shape
        self.pre: Optional[np.ndarray] = None
        self.outputs: Optional[np.ndarray] = None
        self.activations: Optional[np.ndarray] = None  # relu 之后、dropout 之前
        self.dropmask: Optional[np.ndarray] = None
        self.dropout_rate = 0.0
        self.argmax: Optional[np.ndarray] = None


class ActivationRecord:
    """整个前向过程的逐层记录"""

    def __init__(self):
        self.traces: List[LayerTrace] = []

    def activations(self) -> Dict[str, np.ndarray]:
        """带权重层的激活输出（relu 之后、dropout 之前）"""
        return {t.spec.name: t.activations for t in self.traces if t.spec.is_weighted}


def forward(model: Model, batch, mode: str = "eval", rng: Optional[Rng] = None,
            deterministic: bool = True,
            dropout_rates: Optional[Dict[str, float]] = None) -> Tuple[np.ndarray, ActivationRecord]:
    """
    前向传播

    Args:
        model: 模型
        batch: N×1×28×28 输入
        mode: "train"（启用 dropout，需要 rng）或 "eval"
        rng: 训练模式下的随机数发生器
        deterministic: 是否使用固定求和顺序
        dropout_rates: 按层名覆盖 dropout 比例

    Returns:
        (logits, 激活记录)
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"未知的模式: {mode}")
    if mode == "train" and rng is None:
        raise ValueError("训练模式需要 rng")
    x = as_tensor(batch)
    if model.specs[0].kind != "fully_connected" and x.shape[1:] != model.input_shape:
        raise ShapeError(f"输入形状 {x.shape[1:]} 与网络输入 {model.input_shape} 不一致")

    record = ActivationRecord()
    for spec in model.specs:
        trace = LayerTrace(spec, x)
        if spec.kind == "fully_connected":
            flat = x.reshape(x.shape[0], -1)
            if flat.shape[1] != spec.fan_in:
                raise ShapeError(f"层 {spec.name}: 输入维度 {flat.shape[1]} 与 fan_in {spec.fan_in} 不一致")
            p = model.params[spec.name]
            trace.inputs = flat
            trace.pre = linear_forward(flat, p.effective_weights(), p.bias, deterministic)
        elif spec.kind == "conv":
            p = model.params[spec.name]
            trace.pre = conv2d_forward(x, p.effective_weights(), spec.stride, p.bias, deterministic)
        else:
            trace.pre, trace.argmax = maxpool2d_forward(x, spec.kernel, spec.stride)

        out = relu(trace.pre) if spec.has_relu else trace.pre
        trace.activations = out
        rate = spec.dropout_rate_after
        if dropout_rates and spec.name in dropout_rates:
            rate = dropout_rates[spec.name]
        if mode == "train" and rate > 0:
            out, trace.dropmask = dropout_forward(out, rate, rng)
            trace.dropout_rate = rate
        trace.outputs = out
        record.traces.append(trace)
        x = out
    return x, record


def backward(model: Model, record: ActivationRecord, dlogits,
             deterministic: bool = True) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
    """
    手工反向传播

    Returns:
        层名 -> (dW, db)，dW 尚未乘以掩码
    """
    grads = {}
    d = as_tensor(dlogits)
    first = model.specs[0].name
    for trace in reversed(record.traces):
        spec = trace.spec
        if trace.dropmask is not None:
            d = dropout_backward(d, trace.dropmask, trace.dropout_rate)
        if spec.has_relu:
            d = relu_grad(trace.pre, d)
        if spec.kind == "fully_connected":
            p = model.params[spec.name]
            dw = matmul(trace.inputs.T, d, deterministic)
            db = d.astype(np.float64).sum(axis=0).astype(FLOAT)
            grads[spec.name] = (dw, db)
            if spec.name != first:
                d = matmul(d, p.effective_weights().T, deterministic)
        elif spec.kind == "conv":
            p = model.params[spec.name]
            dx, dw, db = conv2d_backward(trace.inputs, p.effective_weights(), spec.stride, d, deterministic)
            grads[spec.name] = (dw, db)
            d = dx
        else:
            d = maxpool2d_backward(d, trace.argmax, trace.inputs.shape, spec.kernel, spec.stride)
        if spec.name != first:
            d = d.reshape(trace.input_shape)
    return grads


def _batches(order: np.ndarray, batch_size: int) -> Iterable[np.ndarray]:
    for start in range(0, len(order), batch_size):
        yield order[start:start + batch_size]


def train(model: Model, dataset: Dataset, cfg: TrainConfig, frozen: Iterable[str] = (),
          dropout_rates: Optional[Dict[str, float]] = None,
          evalset: Optional[Dataset] = None) -> Model:
    """
    小批量 SGD 训练（返回新模型，不修改输入）

    Args:
        model: 初始模型
        dataset: 训练集
        cfg: 训练配置
        frozen: 冻结（不更新权重与偏置）的层名
        dropout_rates: 按层名覆盖 dropout 比例
        evalset: 若提供，每轮结束记录该集合上的错误率

    Returns:
        训练后的模型，model.history 追加每轮记录
    """
    from pruning import masked_grad  # 避免循环导入

    model = model.clone()
    frozen = set(frozen)
    rng = Rng(cfg.seed)
    n = len(dataset)
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(n)
        total_loss = 0.0
        mistakes = 0
        for idx in _batches(order, cfg.batch_size):
            logits, record = forward(model, dataset.images[idx], "train", rng,
                                     cfg.deterministic, dropout_rates)
            loss, dlogits = softmax_cross_entropy(logits, dataset.labels[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"第 {epoch + 1} 轮出现非有限损失 {loss}（学习率 {lr}），请降低学习率或检查数据")
            total_loss += loss * len(idx)
            mistakes += int(np.count_nonzero(logits.argmax(axis=1) != dataset.labels[idx]))
            grads = backward(model, record, dlogits, cfg.deterministic)
            for name, (dw, db) in grads.items():
                if name in frozen:
                    continue
                p = model.params[name]
                p.weights = sgd_step(p.weights, masked_grad(dw, p.mask), lr, cfg.decay)
                p.bias = sgd_step(p.bias, db, lr, _NO_DECAY)

        entry = {"epoch": len(model.history) + 1, "lr": lr,
                 "loss": total_loss / max(n, 1), "train_error": mistakes / max(n, 1)}
        if evalset is not None:
            entry["eval_error"] = evaluate(model, evalset, cfg.eval_batch_size, cfg.deterministic)
        model.history.append(entry)
        logger.info("第 %d/%d 轮: lr=%.5g loss=%.4f 训练错误率=%.4f%s", epoch + 1, cfg.epochs, lr,
                    entry["loss"], entry["train_error"],
                    f" 验证错误率={entry['eval_error']:.4f}" if "eval_error" in entry else "")
    return model


def predict(model: Model, images, batch_size: int = 1000, deterministic: bool = True) -> np.ndarray:
    """逐批推理，返回 argmax 类别（并列取最小下标）"""
    predictions = []
    for start in range(0, len(images), batch_size):
        logits, _ = forward(model, images[start:start + batch_size], "eval", deterministic=deterministic)
        predictions.append(logits.argmax(axis=1))
    return np.concatenate(predictions) if predictions else np.zeros(0, dtype=np.int64)


def evaluate(model: Model, dataset: Dataset, batch_size: int = 1000, deterministic: bool = True) -> float:
    """Top-1 错误率"""
    if len(dataset) == 0:
        return 0.0
    predictions = predict(model, dataset.images, batch_size, deterministic)
    return float(np.count_nonzero(predictions != dataset.labels)) / len(dataset)
