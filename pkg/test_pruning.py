"""
剪枝模块测试：阈值与掩码、dropout 调整、死神经元移除、重训练与迭代剪枝
"""
import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import pruning
from conftest import TINY_SHAPE
from errors import PruningError, ShapeError
from models import DecayMode, MaskedParam, PruneConfig, TrainConfig
from network import forward
from pruning import (
    PruneRecord, adjust_dropout, compute_threshold, dropout_rates_for, frozen_layers,
    iterate_prune, layer_std, masked_grad, prune_dead_neurons, prune_global_fraction,
    prune_layer, prune_model, rank_prune, retrain, retrain_config,
)
from tensor_engine import sgd_step

weights_strategy = arrays(np.float32, st.integers(4, 60),
                          elements=st.floats(-1, 1, allow_nan=False, width=32))


def _param(values, mask=None):
    values = np.asarray(values, dtype=np.float32)
    return MaskedParam(weights=values, mask=mask, bias=np.zeros(1, dtype=np.float32))


# ---------------------------------------------------------------------------
# 阈值与掩码
# ---------------------------------------------------------------------------

def test_prune_layer_keeps_weights_equal_to_threshold():
    p = prune_layer(_param([0.1, -0.5, 0.5, 0.49, -0.2]), 0.5)
    assert p.mask.tolist() == [0, 1, 1, 0, 0]
    assert p.weights.tolist() == [0.0, -0.5, 0.5, 0.0, 0.0]


def test_layer_std_is_population_std_over_live_weights():
    p = _param([1.0, 3.0, 100.0], mask=[1, 1, 0])
    assert layer_std(p) == pytest.approx(1.0)
    assert compute_threshold(p, 2.0) == pytest.approx(2.0)
    with pytest.raises(PruningError):
        layer_std(_param([1.0], mask=[0]))
    with pytest.raises(PruningError):
        compute_threshold(p, -0.1)


@given(weights_strategy, st.floats(0, 3), st.floats(0, 3))
def test_masks_only_shrink(values, q1, q2):
    p = _param(values)
    first = prune_layer(p, q1 * 0.3)
    second = prune_layer(first, q2 * 0.3)
    assert np.all(second.mask <= first.mask)
    assert np.all(second.weights[second.mask == 0] == 0)


@given(weights_strategy, st.floats(0, 2), st.floats(0, 2))
def test_threshold_is_monotone_in_quality(values, q1, q2):
    p = _param(values)
    if np.all(p.weights == p.weights[0]):
        return
    lo, hi = sorted((q1, q2))
    assert compute_threshold(p, lo) <= compute_threshold(p, hi)
    assert prune_layer(p, compute_threshold(p, hi)).live_count <= prune_layer(p, compute_threshold(p, lo)).live_count


def test_masked_grad():
    grad = masked_grad(np.ones((2, 2)), np.array([[1, 0], [0, 1]], dtype=np.float32))
    assert grad.tolist() == [[1, 0], [0, 1]]
    with pytest.raises(ShapeError):
        masked_grad(np.ones(3), np.ones(2, dtype=np.float32))


@pytest.mark.parametrize("kind", ["l1", "l2"])
def test_pruned_weights_stay_zero_under_random_steps(kind):
    rng = np.random.default_rng(0)
    p = prune_layer(_param(rng.standard_normal(40)), 0.8)
    pruned = p.mask == 0
    assert pruned.any()
    weights = p.weights
    decay = DecayMode(kind=kind, coefficient=1e-3)
    for _ in range(10_000):
        weights = sgd_step(weights, masked_grad(rng.standard_normal(40), p.mask), 0.01, decay)
    assert np.all(weights[pruned] == 0.0)


def test_rank_prune_exact_count_and_ties():
    p = rank_prune(_param([0.3, 0.1, 0.1, 0.5, -0.2, 0.0, 0.7, 0.1, 0.9, -0.4]), 0.3)
    assert p.live_count == 7
    # 并列的 0.1 中下标小的先被剪
    assert p.mask.tolist() == [1, 0, 0, 1, 1, 0, 1, 1, 1, 1]
    assert rank_prune(p, 0.3).live_count == 7
    with pytest.raises(PruningError):
        rank_prune(p, 1.5)


def test_prune_global_fraction_counts_across_layers(tiny_model):
    total = tiny_model.total_weights()
    pruned = prune_global_fraction(tiny_model, 0.75)
    assert pruned.live_weights() == total - math.ceil(0.75 * total)
    assert tiny_model.live_weights() == total


def test_prune_model_thresholds(tiny_model):
    pruned, thresholds = prune_model(tiny_model, [1.0, 0.5, 0.0])
    assert set(thresholds) == {"fc1", "fc2", "fc3"}
    assert thresholds["fc3"] == 0.0
    assert pruned.params["fc3"].live_count == tiny_model.params["fc3"].total
    assert pruned.params["fc1"].live_count < tiny_model.params["fc1"].total
    with pytest.raises(PruningError):
        prune_model(tiny_model, [1.0])


# ---------------------------------------------------------------------------
# dropout 调整
# ---------------------------------------------------------------------------

def test_adjust_dropout_exact():
    assert adjust_dropout(0.5, 100, 9) == 0.15
    assert adjust_dropout(0.5, 100, 100) == 0.5
    assert adjust_dropout(0.5, 100, 0) == 0.0


@settings(max_examples=1000)
@given(st.integers(1, 10 ** 6), st.floats(0, 0.95), st.integers(1, 1000))
def test_adjust_dropout_homogeneous(c, d, k):
    assert adjust_dropout(d, 100 * c, 9 * c) == adjust_dropout(d, 100, 9)
    c_r = c // 2
    assert adjust_dropout(d, k * c, k * c_r) == pytest.approx(adjust_dropout(d, c, c_r), rel=1e-12)


def test_adjust_dropout_rejects_bad_counts():
    for args in ((0.5, 0, 0), (0.5, 10, 11), (1.0, 10, 5)):
        with pytest.raises(PruningError):
            adjust_dropout(*args)


def test_dropout_rates_follow_next_layer(tiny_model):
    model = tiny_model.clone()
    model.params["fc2"] = rank_prune(model.params["fc2"], 0.91)
    rates = dropout_rates_for(model)
    kept = model.params["fc2"].live_count / model.params["fc2"].total
    assert rates == {"fc1": pytest.approx(0.5 * math.sqrt(kept))}
    assert dropout_rates_for(model, adjust=False) == {"fc1": 0.5}


# ---------------------------------------------------------------------------
# 死神经元
# ---------------------------------------------------------------------------

def _random_inputs(n=100, shape=TINY_SHAPE, seed=0):
    return np.random.default_rng(seed).random((n,) + shape).astype(np.float32)


def _logits(model, inputs):
    return forward(model, inputs)[0].tobytes()


def test_dead_neuron_chain_is_removed_and_function_preserved(tiny_model):
    model = tiny_model.clone()
    fc1, fc2 = model.params["fc1"], model.params["fc2"]
    # fc1 的 2 号单元没有输入；fc2 的 4 号单元只读 2 号单元
    fc1.mask[:, 2] = 0
    fc1.weights[:, 2] = 0
    fc2.mask[:, 4] = 0
    fc2.mask[2, 4] = 1
    fc2.weights = fc2.weights * fc2.mask
    inputs = _random_inputs()
    before = _logits(model, inputs)

    cleaned, removed = prune_dead_neurons(model)
    assert removed == {"fc1": 1, "fc2": 1, "fc3": 0}
    assert cleaned.params["fc2"].mask[2].sum() == 0
    assert cleaned.params["fc3"].mask[4].sum() == 0
    assert _logits(cleaned, inputs) == before
    # 再做一次不会有变化
    assert prune_dead_neurons(cleaned)[1] == {"fc1": 0, "fc2": 0, "fc3": 0}


def test_unit_without_outputs_loses_inputs(tiny_model):
    model = tiny_model.clone()
    model.params["fc2"].mask[5] = 0
    model.params["fc2"].weights[5] = 0
    inputs = _random_inputs()
    before = _logits(model, inputs)
    cleaned, removed = prune_dead_neurons(model)
    assert removed["fc1"] == 1
    assert cleaned.params["fc1"].mask[:, 5].sum() == 0
    assert cleaned.params["fc1"].bias[5] == 0
    assert _logits(cleaned, inputs) == before


def test_constant_positive_unit_is_kept(tiny_model):
    model = tiny_model.clone()
    fc1 = model.params["fc1"]
    fc1.mask[:, 1] = 0
    fc1.weights[:, 1] = 0
    fc1.bias[1] = 0.5
    cleaned, removed = prune_dead_neurons(model)
    assert removed["fc1"] == 0
    assert cleaned.params["fc2"].mask[1].sum() == model.params["fc2"].mask[1].sum()
    inputs = _random_inputs()
    assert _logits(cleaned, inputs) == _logits(model, inputs)


def test_conv_channel_without_fc_readers(tiny_conv_model):
    model = tiny_conv_model.clone()
    # 通道 1 经池化展平后对应 fc1 的第 4~7 行
    model.params["fc1"].mask[4:8] = 0
    model.params["fc1"].weights[4:8] = 0
    inputs = _random_inputs(shape=(1, 6, 6))
    before = _logits(model, inputs)
    cleaned, removed = prune_dead_neurons(model)
    assert removed["conv1"] == 1
    assert cleaned.params["conv1"].mask[1].sum() == 0
    assert cleaned.params["conv1"].mask[0].sum() == 9
    assert _logits(cleaned, inputs) == before


# ---------------------------------------------------------------------------
# 重训练与迭代剪枝
# ---------------------------------------------------------------------------

def test_frozen_layers(tiny_conv_model):
    assert frozen_layers(tiny_conv_model, "none") == set()
    assert frozen_layers(tiny_conv_model, "freeze_conv_retrain_fc") == {"conv1"}
    assert frozen_layers(tiny_conv_model, "freeze_fc_retrain_conv") == {"fc1"}
    assert frozen_layers(tiny_conv_model, "alternate", 1) == {"conv1"}
    assert frozen_layers(tiny_conv_model, "alternate", 2) == {"fc1"}
    with pytest.raises(PruningError):
        frozen_layers(tiny_conv_model, "sometimes")


def test_retrain_config_uses_tenth_of_lr():
    cfg = retrain_config(TrainConfig(lr=0.1, epochs=20))
    assert cfg.lr == pytest.approx(0.01)
    assert cfg.epochs == 20
    assert retrain_config(TrainConfig(lr=0.1), lr=0.5, epochs=3).epochs == 3


def test_retrain_keeps_mask(tiny_model, tiny_dataset):
    pruned, _ = prune_model(tiny_model, [1.0, 1.0, 0.5])
    cfg = TrainConfig(epochs=2, batch_size=10, lr=0.05, seed=2)
    retrained = retrain(pruned, tiny_dataset, cfg)
    for name in pruned.layer_names():
        before, after = pruned.params[name], retrained.params[name]
        assert after.mask.tobytes() == before.mask.tobytes()
        assert np.all(after.weights[after.mask == 0] == 0)


def _prune_cfg(iterations=3, tolerance=0.2):
    return PruneConfig(quality=[0.5, 0.5, 0.3], iterations=iterations, quality_growth=1.2,
                       retrain=TrainConfig(epochs=1, batch_size=10, lr=0.05, seed=2),
                       tolerance_pp=tolerance)


def test_iterate_prune_records_every_iteration(tiny_model, tiny_dataset):
    final, record = iterate_prune(tiny_model, tiny_dataset, _prune_cfg())
    assert record.iterations() == [1, 2, 3]
    remaining = [record.total_remaining_pct(i) for i in record.iterations()]
    assert remaining == sorted(remaining, reverse=True)
    assert final.live_weights() < tiny_model.live_weights()
    assert not record.stopped_early


def test_iterate_prune_stops_early(monkeypatch, tiny_model, tiny_dataset, tiny_evalset):
    errors = iter([0.10, 0.101, 0.5])
    monkeypatch.setattr(pruning, "evaluate", lambda *args, **kwargs: next(errors))
    final, record = iterate_prune(tiny_model, tiny_dataset, _prune_cfg(), evalset=tiny_evalset)
    assert record.stopped_early
    assert record.iterations() == [1]
    assert record.baseline_error == 0.10
    assert final.live_weights() == sum(row.weights_remaining for row in record.rows)


def test_iterate_prune_quality_count_mismatch(tiny_model, tiny_dataset):
    cfg = _prune_cfg().model_copy(update={"quality": [1.0]})
    with pytest.raises(PruningError):
        iterate_prune(tiny_model, tiny_dataset, cfg)


def test_prune_record_csv(tmp_path, tiny_model):
    record = PruneRecord()
    pruned, thresholds = prune_model(tiny_model, [1.0, 1.0, 1.0])
    record.add_model(1, pruned, thresholds, 0.02)
    path = tmp_path / "record.csv"
    record.to_csv(str(path))
    frame = pd.read_csv(path)
    assert list(frame.columns) == PruneRecord.COLUMNS
    assert frame["layer"].tolist() == ["fc1", "fc2", "fc3"]
    assert record.remaining_pct("fc1")[0] == pytest.approx(frame.loc[0, "remaining_pct"])
