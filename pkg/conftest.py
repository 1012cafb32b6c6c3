"""
测试公共夹具：合成 IDX 数据、小型网络与 hypothesis 配置
"""
import os
import struct

import numpy as np
import pytest
from hypothesis import settings

from models import LayerSpec
from network import Dataset, init_model

settings.register_profile("netprune", database=None, deadline=None, max_examples=50)
settings.load_profile("netprune")

TINY_SHAPE = (1, 4, 4)
TINY_CLASSES = 3


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray):
    """写出 IDX 图像（魔数 2051）与标签（魔数 2049）文件"""
    count, rows, cols = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", 2051, count, rows, cols))
        f.write(images.astype(np.uint8).tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


def synthetic_digits(count: int, seed: int, size: int = 28, classes: int = 10):
    """每个类别点亮一条横带，其余位置为稀疏噪声（uint8 像素）"""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, classes, size=count)
    images = (rng.random((count, size, size)) < 0.1) * rng.integers(0, 120, size=(count, size, size))
    band = max(size // classes, 1)
    for i, label in enumerate(labels):
        start = (label * band) % size
        images[i, start:start + band, 2:size - 2] = 255
    return images.astype(np.uint8), labels.astype(np.uint8)


@pytest.fixture
def idx_writer():
    return write_idx


@pytest.fixture
def mnist_files(tmp_path):
    """28×28 合成数据集的四个 IDX 文件"""
    paths = {}
    for split, count, seed in (("train", 160, 1), ("t10k", 80, 2)):
        images, labels = synthetic_digits(count, seed)
        images_path = str(tmp_path / f"{split}-images-idx3-ubyte")
        labels_path = str(tmp_path / f"{split}-labels-idx1-ubyte")
        write_idx(images_path, labels_path, images, labels)
        key = "train" if split == "train" else "test"
        paths[f"{key}_images"] = images_path
        paths[f"{key}_labels"] = labels_path
    return paths


@pytest.fixture
def tiny_specs():
    """16 → 8 → 6 → 3 的小型全连接网络"""
    return [
        LayerSpec(name="fc1", kind="fully_connected", fan_in=16, fan_out=8,
                  has_relu=True, dropout_rate_after=0.5),
        LayerSpec(name="fc2", kind="fully_connected", fan_in=8, fan_out=6, has_relu=True),
        LayerSpec(name="fc3", kind="fully_connected", fan_in=6, fan_out=TINY_CLASSES),
    ]


@pytest.fixture
def tiny_model(tiny_specs):
    return init_model(tiny_specs, seed=3, input_shape=TINY_SHAPE)


@pytest.fixture
def tiny_conv_specs():
    """1×6×6 → conv(2, 3×3) → pool → fc 8 → 3"""
    return [
        LayerSpec(name="conv1", kind="conv", in_channels=1, filters=2, kernel=3, stride=1, has_relu=True),
        LayerSpec(name="pool1", kind="maxpool", kernel=2, stride=2),
        LayerSpec(name="fc1", kind="fully_connected", fan_in=8, fan_out=TINY_CLASSES),
    ]


@pytest.fixture
def tiny_conv_model(tiny_conv_specs):
    return init_model(tiny_conv_specs, seed=5, input_shape=(1, 6, 6))


def make_tiny_dataset(count: int, seed: int) -> Dataset:
    """类别 c 点亮第 c 行，可线性分开"""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, TINY_CLASSES, size=count)
    images = rng.random((count,) + TINY_SHAPE).astype(np.float32) * 0.3
    images[np.arange(count), 0, labels, :] = 1.0
    return Dataset(images, labels)


@pytest.fixture
def tiny_dataset():
    return make_tiny_dataset(90, seed=11)


@pytest.fixture
def tiny_evalset():
    return make_tiny_dataset(60, seed=12)


@pytest.fixture
def mnist_dir():
    """真实 MNIST 目录（环境变量 MNIST_DIR），未设置时跳过"""
    path = os.environ.get("MNIST_DIR")
    if not path or not os.path.isdir(path):
        pytest.skip("未设置 MNIST_DIR，跳过需要真实 MNIST 的测试")
    return path
