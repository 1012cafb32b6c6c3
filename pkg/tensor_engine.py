"""
张量计算引擎
稠密 float32 张量运算、确定性随机数、以及各层前向/反向所需的梯度原语

约定：
- 张量即 numpy float32 数组（行优先）
- matmul / 卷积在 float64 中按固定顺序（沿求和维从左到右）累加，存储时只舍入一次
- 所有函数都是纯函数，随机性只来自显式传入的 Rng
"""
from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from errors import ShapeError
from models import DecayMode

FLOAT = np.float32
ACCUM = np.float64


class Rng:
    """
    确定性随机数发生器

    算法固定为 numpy 的 PCG64，同一种子在任何平台上产生相同的序列。
    """
    ALGORITHM = "PCG64"

    def __init__(self, seed: int):
        """
        Args:
            seed: 64位无符号整数种子
        """
        if not 0 <= int(seed) < 2 ** 64:
            raise ValueError(f"种子必须是64位无符号整数: {seed}")
        self.seed = int(seed)
        self._generator = np.random.Generator(np.random.PCG64(self.seed))

    def spawn(self, key: int) -> "Rng":
        """按 key 派生一个独立的随机流"""
        state = np.random.SeedSequence([self.seed, int(key)]).generate_state(1, dtype=np.uint64)
        return Rng(int(state[0]))

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self._generator.uniform(low, high, size=shape).astype(FLOAT)

    def random(self, shape) -> np.ndarray:
        return self._generator.random(size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._generator.permutation(n)

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        return (self._generator.standard_normal(size=shape) * scale).astype(FLOAT)


def as_tensor(x) -> np.ndarray:
    """转换为 float32 张量"""
    return np.asarray(x, dtype=FLOAT)


def _ordered_accumulate(a: np.ndarray, b: np.ndarray, deterministic: bool = True) -> np.ndarray:
    """
    计算 a @ b 的 float64 累加结果（未舍入）

    确定性模式下逐个 k 从左到右累加，与三重循环结果逐位相同。
    """
    a64 = a.astype(ACCUM)
    b64 = b.astype(ACCUM)
    if not deterministic:
        return a64 @ b64

    acc = np.zeros((a.shape[0], b.shape[1]), dtype=ACCUM)
    # 全零的项不改变累加值（acc 从 +0.0 开始，加 ±0.0 结果不变），可以跳过
    active = np.flatnonzero(a64.any(axis=0) & b64.any(axis=1))
    for p in active:
        acc += a64[:, p, None] * b64[p]
    return acc


def matmul(a, b, deterministic: bool = True) -> np.ndarray:
    """
    矩阵乘法 [m×k] × [k×n] -> [m×n]

    Args:
        a: 左矩阵
        b: 右矩阵
        deterministic: 是否使用固定求和顺序

    Returns:
        float32 结果
    """
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul 维度不匹配: {a.shape} × {b.shape}")
    return _ordered_accumulate(a, b, deterministic).astype(FLOAT)


def linear_forward(x, w, b, deterministic: bool = True) -> np.ndarray:
    """全连接层前向：x @ w + b，偏置在舍入前加入"""
    x = as_tensor(x)
    w = as_tensor(w)
    b = as_tensor(b)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"全连接层维度不匹配: x{x.shape} w{w.shape} b{b.shape}")
    return (_ordered_accumulate(x, w, deterministic) + b.astype(ACCUM)).astype(FLOAT)


def conv_output_size(size: int, kernel: int, stride: int) -> int:
    """valid 卷积的输出尺寸，不能整除时报错"""
    if size < kernel or (size - kernel) % stride != 0:
        raise ShapeError(f"输出尺寸不是整数: 输入 {size}, 卷积核 {kernel}, 步长 {stride}")
    return (size - kernel) // stride + 1


def _im2col(x: np.ndarray, kernel: int, stride: int) -> Tuple[np.ndarray, int, int]:
    """N×C×H×W -> (N·H'·W') × (C·k·k)，列顺序为 (c, ki, kj)"""
    n, c, h, w = x.shape
    out_h = conv_output_size(h, kernel, stride)
    out_w = conv_output_size(w, kernel, stride)
    windows = sliding_window_view(x, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * out_h * out_w, c * kernel * kernel)
    return np.ascontiguousarray(cols), out_h, out_w


def conv2d_forward(x, kernels, stride: int = 1, bias=None, deterministic: bool = True) -> np.ndarray:
    """
    卷积前向（互相关，不翻转卷积核，无填充）

    Args:
        x: C×H×W 或 N×C×H×W 输入
        kernels: F×C×k×k 卷积核
        stride: 步长
        bias: 每个卷积核一个偏置，None 表示全零

    Returns:
        F×H'×W'（或 N×F×H'×W'）输出
    """
    x = as_tensor(x)
    kernels = as_tensor(kernels)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or kernels.ndim != 4 or kernels.shape[1] != x.shape[1] \
            or kernels.shape[2] != kernels.shape[3]:
        raise ShapeError(f"卷积维度不匹配: x{x.shape} kernels{kernels.shape}")
    if stride <= 0:
        raise ShapeError(f"步长必须为正: {stride}")
    filters, _, k, _ = kernels.shape
    bias = np.zeros(filters, dtype=FLOAT) if bias is None else as_tensor(bias)
    if bias.shape != (filters,):
        raise ShapeError(f"偏置长度 {bias.shape} 与卷积核数 {filters} 不一致")

    cols, out_h, out_w = _im2col(x, k, stride)
    acc = _ordered_accumulate(cols, kernels.reshape(filters, -1).T, deterministic)
    out = (acc + bias.astype(ACCUM)).astype(FLOAT)
    out = out.reshape(x.shape[0], out_h, out_w, filters).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    return out[0] if single else out


def conv2d_backward(x, kernels, stride: int, dy, deterministic: bool = True):
    """
    卷积反向

    Args:
        x: N×C×H×W 前向输入
        kernels: F×C×k×k 前向使用的（已掩码）卷积核
        stride: 步长
        dy: N×F×H'×W' 输出梯度

    Returns:
        (dx, dkernels, dbias)
    """
    x = as_tensor(x)
    kernels = as_tensor(kernels)
    dy = as_tensor(dy)
    n, c, h, w = x.shape
    filters, _, k, _ = kernels.shape
    cols, out_h, out_w = _im2col(x, k, stride)
    if dy.shape != (n, filters, out_h, out_w):
        raise ShapeError(f"卷积输出梯度形状错误: {dy.shape}")

    dy_mat = dy.transpose(0, 2, 3, 1).reshape(-1, filters)
    dkernels = _ordered_accumulate(dy_mat.T, cols, deterministic).astype(FLOAT).reshape(kernels.shape)
    dbias = dy_mat.astype(ACCUM).sum(axis=0).astype(FLOAT)

    dcols = _ordered_accumulate(dy_mat, kernels.reshape(filters, -1), deterministic)
    dcols = dcols.reshape(n, out_h, out_w, c, k, k)
    dx = np.zeros((n, c, h, w), dtype=ACCUM)
    # col2im：按卷积核位置逐块回填
    for ki in range(k):
        for kj in range(k):
            dx[:, :, ki:ki + stride * out_h:stride, kj:kj + stride * out_w:stride] += \
                dcols[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
    return dx.astype(FLOAT), dkernels, dbias


def maxpool2d_forward(x, size: int = 2, stride: int = 2) -> Tuple[np.ndarray, np.ndarray]:
    """
    最大池化前向

    Returns:
        (输出, 每个窗口内最大值的扁平位置)；并列时取行优先顺序的第一个
    """
    x = as_tensor(x)
    n, c, h, w = x.shape
    out_h = conv_output_size(h, size, stride)
    out_w = conv_output_size(w, size, stride)
    windows = sliding_window_view(x, (size, size), axis=(2, 3))[:, :, ::stride, ::stride]
    windows = windows.reshape(n, c, out_h, out_w, size * size)
    argmax = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), argmax


def maxpool2d_backward(dy, argmax: np.ndarray, input_shape, size: int = 2, stride: int = 2) -> np.ndarray:
    """最大池化反向：梯度只回传给窗口内的最大值位置"""
    dy = as_tensor(dy)
    n, c, out_h, out_w = dy.shape
    dx = np.zeros(input_shape, dtype=FLOAT)
    rows = (np.arange(out_h) * stride)[None, None, :, None] + argmax // size
    cols = (np.arange(out_w) * stride)[None, None, None, :] + argmax % size
    nn_idx = np.arange(n)[:, None, None, None]
    cc_idx = np.arange(c)[None, :, None, None]
    np.add.at(dx, (nn_idx, cc_idx, rows, cols), dy)
    return dx


def relu(x) -> np.ndarray:
    return np.maximum(as_tensor(x), FLOAT(0))


def relu_grad(x, dy) -> np.ndarray:
    """x > 0 处传递梯度，x == 0 处梯度为 0"""
    x = as_tensor(x)
    dy = as_tensor(dy)
    if x.shape != dy.shape:
        raise ShapeError(f"relu_grad 形状不匹配: {x.shape} vs {dy.shape}")
    return np.where(x > 0, dy, FLOAT(0)).astype(FLOAT)


def softmax_cross_entropy(logits, labels) -> Tuple[float, np.ndarray]:
    """
    Softmax 交叉熵

    Args:
        logits: n×C
        labels: n 个整数标签

    Returns:
        (平均负对数似然, dlogits = (softmax − onehot)/n)
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} 与 labels {labels.shape} 不匹配")
    n, classes = logits.shape
    if n and (labels.min() < 0 or labels.max() >= classes):
        raise ValueError(f"标签超出范围 [0, {classes})")

    z = logits.astype(ACCUM)
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_norm - z[rows, labels]))
    probs = np.exp(z - log_norm[:, None])
    probs[rows, labels] -= 1.0
    return loss, (probs / n).astype(FLOAT)


def sgd_step(param, grad, lr: float, decay: DecayMode) -> np.ndarray:
    """
    一步 SGD 更新（返回新数组）

    l2: w − lr·(g + λw)
    l1: w − lr·(g + λ·sign(w))，衰减项不会让权重越过 0（越过则截为 0）
    """
    param = as_tensor(param)
    grad = as_tensor(grad)
    if param.shape != grad.shape:
        raise ShapeError(f"sgd_step 形状不匹配: {param.shape} vs {grad.shape}")
    if lr <= 0:
        raise ValueError(f"学习率必须为正: {lr}")

    lam = FLOAT(decay.coefficient)
    lr = FLOAT(lr)
    if decay.kind == "l2":
        return (param - lr * (grad + lam * param)).astype(FLOAT)
    if decay.kind == "none":
        return (param - lr * grad).astype(FLOAT)

    sign = np.sign(param)
    stepped = (param - lr * grad).astype(FLOAT)
    decayed = (stepped - lr * lam * sign).astype(FLOAT)
    # 衰减项只能把权重推向 0：梯度步已落在 0 或衰减后变号时截为 0
    crossed = (stepped == 0) | (np.sign(decayed) != np.sign(stepped))
    decayed[crossed] = 0.0
    return decayed


def dropout_forward(x, rate: float, rng: Rng) -> Tuple[np.ndarray, np.ndarray]:
    """
    反向缩放的 dropout：保留的单元乘以 1/(1−rate)，推理时无需缩放

    Returns:
        (y, dropmask)，dropmask ∈ {0, 1}
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout 比例必须在 [0, 1) 内: {rate}")
    x = as_tensor(x)
    dropmask = (rng.random(x.shape) >= rate).astype(FLOAT)
    scale = FLOAT(1.0 / (1.0 - rate))
    return (x * (dropmask * scale)).astype(FLOAT), dropmask


def dropout_backward(dy, dropmask: np.ndarray, rate: float) -> np.ndarray:
    scale = FLOAT(1.0 / (1.0 - rate))
    return (as_tensor(dy) * (dropmask * scale)).astype(FLOAT)


def all_finite(x: Optional[np.ndarray]) -> bool:
    return x is None or bool(np.all(np.isfinite(x)))
