"""
网络模块测试：结构、IDX 读取、前向/反向与训练
"""
import os
import struct

import numpy as np
import pytest

from conftest import TINY_SHAPE, make_tiny_dataset
from errors import (
    ArchitectureError, IdxCountMismatchError, IdxMagicError, IdxTruncatedError, ShapeError,
    TrainingDivergedError,
)
from models import LayerSpec, TrainConfig
from network import (
    Dataset, backward, build_preset, evaluate, forward, init_model, load_mnist_idx, predict,
    train, validate_specs,
)
from tensor_engine import Rng, softmax_cross_entropy


def test_lenet5_shape_walk():
    shapes = validate_specs(build_preset("lenet-5"))
    outs = [out for _, out in shapes]
    assert outs == [(20, 24, 24), (20, 12, 12), (50, 8, 8), (50, 4, 4), (500,), (10,)]


def test_preset_errors():
    with pytest.raises(ArchitectureError):
        build_preset("alexnet")
    specs = build_preset("lenet-300-100")
    specs[1] = LayerSpec(name="fc2", kind="fully_connected", fan_in=299, fan_out=100, has_relu=True)
    with pytest.raises(ArchitectureError):
        validate_specs(specs)


def test_layer_spec_rejects_dropout_after_conv():
    with pytest.raises(ValueError):
        LayerSpec(name="c", kind="conv", in_channels=1, filters=2, kernel=3, stride=1,
                  has_relu=True, dropout_rate_after=0.5)


def test_load_mnist_idx(tmp_path, idx_writer):
    images = np.array([[[0, 255], [128, 0]], [[255, 255], [0, 0]]], dtype=np.uint8)
    idx_writer(tmp_path / "img", tmp_path / "lbl", images, [3, 7])
    data = load_mnist_idx(str(tmp_path / "img"), str(tmp_path / "lbl"))
    assert len(data) == 2
    assert data.images.shape == (2, 1, 2, 2)
    assert data.images[0, 0, 0, 1] == 1.0
    assert data.labels.tolist() == [3, 7]


def test_load_mnist_idx_errors(tmp_path, idx_writer):
    images = np.zeros((3, 2, 2), dtype=np.uint8)
    idx_writer(tmp_path / "img", tmp_path / "lbl", images, [1, 2])
    with pytest.raises(IdxCountMismatchError):
        load_mnist_idx(str(tmp_path / "img"), str(tmp_path / "lbl"))

    (tmp_path / "bad").write_bytes(struct.pack(">IIII", 1234, 3, 2, 2) + bytes(12))
    with pytest.raises(IdxMagicError):
        load_mnist_idx(str(tmp_path / "bad"), str(tmp_path / "lbl"))

    (tmp_path / "short").write_bytes(struct.pack(">IIII", 2051, 3, 2, 2) + bytes(5))
    with pytest.raises(IdxTruncatedError):
        load_mnist_idx(str(tmp_path / "short"), str(tmp_path / "lbl"))


def test_dataset_split_is_deterministic_and_disjoint(tiny_dataset):
    rest, val = tiny_dataset.split(20, seed=4)
    rest2, val2 = tiny_dataset.split(20, seed=4)
    assert len(val) == 20 and len(rest) == len(tiny_dataset) - 20
    assert val.images.tobytes() == val2.images.tobytes()
    assert len(tiny_dataset.limit(10)) == 10


def test_init_model(tiny_specs):
    model = init_model(tiny_specs, seed=3, input_shape=TINY_SHAPE)
    fc1 = model.params["fc1"]
    bound = np.sqrt(6.0 / (16 + 8))
    assert np.all(np.abs(fc1.weights) <= bound)
    assert np.all(fc1.bias == 0) and np.all(fc1.mask == 1)
    assert model.checksum() == init_model(tiny_specs, seed=3, input_shape=TINY_SHAPE).checksum()
    assert model.checksum() != init_model(tiny_specs, seed=4, input_shape=TINY_SHAPE).checksum()


def test_forward_shapes_and_modes(tiny_model, tiny_dataset):
    logits, record = forward(tiny_model, tiny_dataset.images[:5])
    assert logits.shape == (5, 3)
    assert set(record.activations()) == {"fc1", "fc2", "fc3"}
    with pytest.raises(ValueError):
        forward(tiny_model, tiny_dataset.images[:5], mode="train")


def test_forward_conv_rejects_wrong_input(tiny_conv_model):
    logits, _ = forward(tiny_conv_model, np.zeros((2, 1, 6, 6)))
    assert logits.shape == (2, 3)
    with pytest.raises(ShapeError):
        forward(tiny_conv_model, np.zeros((2, 1, 7, 7)))


def _loss(model, x, y):
    logits, _ = forward(model, x)
    return softmax_cross_entropy(logits, y)[0]


@pytest.mark.parametrize("layer,index", [("fc1", (3, 2)), ("fc2", (1, 4)), ("fc3", (5, 0))])
def test_backward_matches_finite_differences(tiny_specs, layer, index):
    specs = [spec.model_copy(update={"has_relu": False, "dropout_rate_after": 0.0}) for spec in tiny_specs]
    model = init_model(specs, seed=8, input_shape=TINY_SHAPE)
    data = make_tiny_dataset(6, seed=2)
    logits, record = forward(model, data.images)
    _, dlogits = softmax_cross_entropy(logits, data.labels)
    grads = backward(model, record, dlogits)

    eps = 1e-2
    plus, minus = model.clone(), model.clone()
    plus.params[layer].weights[index] += eps
    minus.params[layer].weights[index] -= eps
    numeric = (_loss(plus, data.images, data.labels) - _loss(minus, data.images, data.labels)) / (2 * eps)
    assert grads[layer][0][index] == pytest.approx(numeric, abs=2e-3)


@pytest.mark.parametrize("layer,position", [("fc2", 1), ("fc3", 2)])
def test_backward_with_relu_matches_central_differences(tiny_specs, layer, position):
    specs = [spec.model_copy(update={"dropout_rate_after": 0.0}) for spec in tiny_specs]
    model = init_model(specs, seed=8, input_shape=TINY_SHAPE)
    data = make_tiny_dataset(6, seed=2)
    logits, record = forward(model, data.images)
    _, dlogits = softmax_cross_entropy(logits, data.labels)
    grads = backward(model, record, dlogits)

    eps = 1e-3
    trace = record.traces[position]
    # 选预激活离 0 最远的输出列，扰动该列权重不会跨过 ReLU 的折点
    column = int(np.argmax(np.abs(trace.pre).min(axis=0)))
    if trace.spec.has_relu:
        assert np.abs(trace.pre[:, column]).min() > eps * np.abs(trace.inputs).max()
    for row in range(trace.inputs.shape[1]):
        plus, minus = model.clone(), model.clone()
        plus.params[layer].weights[row, column] += eps
        minus.params[layer].weights[row, column] -= eps
        step = float(plus.params[layer].weights[row, column]) - float(minus.params[layer].weights[row, column])
        numeric = (_loss(plus, data.images, data.labels) - _loss(minus, data.images, data.labels)) / step
        assert grads[layer][0][row, column] == pytest.approx(numeric, rel=1e-2, abs=5e-4)


def test_conv_backward_shapes(tiny_conv_model):
    data = np.random.default_rng(0).random((4, 1, 6, 6)).astype(np.float32)
    logits, record = forward(tiny_conv_model, data)
    _, dlogits = softmax_cross_entropy(logits, np.array([0, 1, 2, 0]))
    grads = backward(tiny_conv_model, record, dlogits)
    assert grads["conv1"][0].shape == (2, 1, 3, 3)
    assert grads["fc1"][0].shape == (8, 3)


def test_train_learns_and_is_reproducible(tiny_model, tiny_dataset, tiny_evalset):
    cfg = TrainConfig(epochs=6, batch_size=10, lr=0.2, lr_schedule="fixed", seed=9)
    before = tiny_model.checksum()
    trained = train(tiny_model, tiny_dataset, cfg, evalset=tiny_evalset)
    assert tiny_model.checksum() == before
    assert len(trained.history) == 6
    assert trained.history[-1]["loss"] < trained.history[0]["loss"]
    assert evaluate(trained, tiny_evalset) < evaluate(tiny_model, tiny_evalset)
    assert "eval_error" in trained.history[0]
    assert train(tiny_model, tiny_dataset, cfg).checksum() == trained.checksum()


def test_train_frozen_layer_is_untouched(tiny_model, tiny_dataset):
    cfg = TrainConfig(epochs=1, batch_size=10, lr=0.1, seed=1)
    trained = train(tiny_model, tiny_dataset, cfg, frozen={"fc2"})
    assert trained.params["fc2"].weights.tobytes() == tiny_model.params["fc2"].weights.tobytes()
    assert trained.params["fc1"].weights.tobytes() != tiny_model.params["fc1"].weights.tobytes()


def test_train_diverged(tiny_model, tiny_dataset):
    tiny_model.params["fc1"].weights[:] = np.inf
    with pytest.raises(TrainingDivergedError):
        train(tiny_model, tiny_dataset, TrainConfig(epochs=1, batch_size=10, seed=1))


def test_predict_ties_take_lowest_index(tiny_model):
    for p in tiny_model.params.values():
        p.weights[:] = 0.0
    assert predict(tiny_model, np.ones((3,) + TINY_SHAPE, dtype=np.float32)).tolist() == [0, 0, 0]


def test_evaluate_empty_dataset(tiny_model):
    empty = Dataset(np.zeros((0,) + TINY_SHAPE), np.zeros(0))
    assert evaluate(tiny_model, empty) == 0.0


def test_lr_schedule():
    cfg = TrainConfig(lr=0.1, lr_schedule="step", lr_step_epochs=2, lr_step_gamma=0.5)
    assert [cfg.lr_at(e) for e in range(5)] == [0.1, 0.1, 0.05, 0.05, 0.025]
    assert Rng(1).permutation(5).tolist() == Rng(1).permutation(5).tolist()


def test_real_mnist_files(mnist_dir):
    train_set = load_mnist_idx(os.path.join(mnist_dir, "train-images-idx3-ubyte"),
                               os.path.join(mnist_dir, "train-labels-idx1-ubyte"))
    test_set = load_mnist_idx(os.path.join(mnist_dir, "t10k-images-idx3-ubyte"),
                              os.path.join(mnist_dir, "t10k-labels-idx1-ubyte"))
    assert len(train_set) == 60_000 and len(test_set) == 10_000
    assert train_set.images.shape[1:] == (1, 28, 28)
    assert 0.0 <= float(train_set.images.min()) and float(train_set.images.max()) <= 1.0
    assert sorted(np.unique(test_set.labels).tolist()) == list(range(10))
    assert test_set.labels[0] == 7 and train_set.labels[0] == 5
