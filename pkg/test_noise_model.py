"""
Tests for the noise adjuster.
"""
import os
import sys

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src import noise_model
from src.errors import AdjustmentOverflowError, DomainError
from src.forest import ForestModel, RegressionTree, Standardizer
from src.noise_model import NoiseModel, relative_error_targets

WORKERS = list(range(10))


def rows_for(config_id, base, errors, metric_scale=1.0):
    """One row per worker: performance = base * (1 + error), metric 'noise' tracks the error."""
    return [({"noise": metric_scale * e, "load": float(w)}, w, base * (1.0 + e), config_id)
            for w, e in enumerate(errors)]


def with_constant_prediction(model, s):
    """Install a fitted state whose forest always predicts s."""
    model.observe_metrics({"noise": 0.0})
    width = model.feature_width
    model._fitted = (Standardizer(np.zeros(width), np.ones(width)),
                     ForestModel(trees=[RegressionTree.leaf(s)], n_features=width))
    return model


def test_targets_are_relative_to_the_config_mean():
    rows = [({}, 0, 110.0, 1), ({}, 1, 90.0, 1), ({}, 0, 50.0, 2), ({}, 1, 50.0, 2)]
    usable, targets = relative_error_targets(rows)
    assert len(usable) == 4
    assert targets[:2] == pytest.approx([0.1, -0.1])
    assert targets[2:] == [0.0, 0.0]


def test_targets_drop_single_row_configs_and_sort():
    rows = [({}, 3, 100.0, 7), ({}, 1, 100.0, 2), ({}, 0, 100.0, 2), ({}, 5, 10.0, 9)]
    usable, _ = relative_error_targets(rows)
    assert [(r[3], r[1]) for r in usable] == [(2, 0), (2, 1)]


def test_cold_model_is_identity():
    model = NoiseModel(WORKERS)
    assert model.is_cold
    assert model.adjust({"noise": 3.0}, 0, 777.0, False) == 777.0


def test_one_config_keeps_model_cold():
    model = NoiseModel(WORKERS).train(rows_for(1, 100.0, np.linspace(-0.05, 0.05, 10)))
    assert model.is_cold


def test_two_configs_activate_the_model():
    rows = rows_for(1, 100.0, np.linspace(-0.05, 0.05, 10)) + rows_for(2, 300.0, np.linspace(0.05, -0.05, 10))
    model = noise_model.train(rows, WORKERS, seed=0)
    assert not model.is_cold
    assert model.trained_row_count == 20
    assert model.get_info()["fits"] == 1


def test_equal_rows_train_a_zero_model():
    rows = rows_for(1, 100.0, [0.0] * 10) + rows_for(2, 200.0, [0.0] * 10)
    model = NoiseModel(WORKERS).train(rows)
    assert not model.is_cold
    assert model.predict_error({"noise": 0.0, "load": 3.0}, 3) == 0.0
    assert model.adjust({"noise": 0.0, "load": 3.0}, 3, 512.0, False) == 512.0


def test_adjust_examples():
    model = with_constant_prediction(NoiseModel(WORKERS), 0.1)
    assert model.adjust({"noise": 1.0}, 0, 110.0, False) == pytest.approx(100.0)
    assert model.adjust({"noise": 1.0}, 0, 300.0, True) == 300.0
    zero = with_constant_prediction(NoiseModel(WORKERS), 0.0)
    assert noise_model.adjust(zero, {"noise": 1.0}, 0, 777.0, False) == 777.0


def test_adjust_is_monotone_in_performance():
    model = with_constant_prediction(NoiseModel(WORKERS), 0.2)
    values = [model.adjust({"noise": 0.0}, 1, p, False) for p in np.linspace(10, 1000, 50)]
    assert all(a < b for a, b in zip(values, values[1:]))


def test_overflow_and_bad_input():
    model = with_constant_prediction(NoiseModel(WORKERS), -1.0)
    with pytest.raises(AdjustmentOverflowError):
        model.adjust({"noise": 0.0}, 0, 100.0, False)
    with pytest.raises(DomainError):
        model.adjust({"noise": 0.0}, 0, float("nan"), False)


def test_guardrail_clamps_predictions():
    model = with_constant_prediction(NoiseModel(WORKERS, guardrail=True), 3.0)
    assert model.predict_error({"noise": 0.0}, 0) == 0.5
    assert model.adjust({"noise": 0.0}, 0, 150.0, False) == pytest.approx(100.0)
    low = with_constant_prediction(NoiseModel(WORKERS, guardrail=True), -2.0)
    assert low.adjust({"noise": 0.0}, 0, 50.0, False) == pytest.approx(100.0)


def test_unseen_worker_gets_zero_block():
    model = NoiseModel([0, 1, 2])
    model.observe_metrics({"a": 1.0})
    assert list(model.features({"a": 2.0}, 1)) == [2.0, 0.0, 1.0, 0.0]
    assert list(model.features({"a": 2.0}, 99)) == [2.0, 0.0, 0.0, 0.0]


def test_metric_vocabulary_is_frozen():
    model = NoiseModel([0])
    model.observe_metrics({"b": 1.0, "a": 2.0})
    model.observe_metrics({"a": 1.0, "c": 5.0})
    assert model.metric_vocabulary == ["a", "b"]
    row = model.features({"a": 1.0, "c": 5.0}, 0)
    assert row[0] == 1.0 and np.isnan(row[1])


def test_learned_noise_is_removed():
    rng = np.random.default_rng(0)
    rows = []
    for config_id in range(20):
        errors = rng.uniform(-0.1, 0.1, size=10)
        rows += rows_for(config_id, 100.0 * (config_id + 1), errors)
    model = NoiseModel(WORKERS, seed=1).train(rows)

    raw_error, adjusted_error = [], []
    for _ in range(100):
        e = rng.uniform(-0.08, 0.08)
        w = int(rng.integers(0, 10))
        p = 250.0 * (1 + e)
        adjusted = model.adjust({"noise": e, "load": float(w)}, w, p, False)
        raw_error.append(abs(p - 250.0) / 250.0)
        adjusted_error.append(abs(adjusted - 250.0) / 250.0)
    assert np.mean(adjusted_error) <= 0.7 * np.mean(raw_error)


def test_training_ignores_row_order():
    rng = np.random.default_rng(3)
    rows = []
    for config_id in range(4):
        rows += rows_for(config_id, 100.0, rng.uniform(-0.1, 0.1, size=10))
    point = {"noise": 0.03, "load": 2.0}
    a = NoiseModel(WORKERS, seed=5).train(rows).predict_error(point, 2)
    b = NoiseModel(WORKERS, seed=5).train(list(reversed(rows))).predict_error(point, 2)
    assert a == b


def test_retraining_below_minimum_goes_cold_again():
    rows = rows_for(1, 100.0, np.linspace(-0.05, 0.05, 10)) + rows_for(2, 300.0, np.linspace(0.05, -0.05, 10))
    model = NoiseModel(WORKERS).train(rows)
    assert not model.is_cold
    model.train(rows[:10])
    assert model.is_cold
    assert model.trained_row_count == 0
