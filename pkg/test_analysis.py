"""
Tests for run analysis: detection probability, curves, dispersion and deployment.
"""
import itertools
import json
import math
import os
import sys

import numpy as np
import pandas as pd
import pytest

# Add project root to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from app import RunConfig, build_tuner
from src.analysis import (ConvergenceCurve, DeploymentReport, adjustment_error, convergence_curves, cov,
                          deployment_eval, deployment_truth, detection_probability, detection_table,
                          mean_curve, min_cluster_size, run_detection_probability, summarize,
                          time_to_optimal, write_curves_csv, write_deploy_csv, write_summary)
from src.catalog import Catalog
from src.configspace import default_config
from src.errors import DegenerateInputError, DomainError
from src.simulator import deployment_workers, make_environment


def enumerated_detection(n, pool=10, bad=5):
    hits = total = 0
    for subset in itertools.combinations(range(pool), n):
        total += 1
        bad_count = sum(1 for w in subset if w < bad)
        hits += 0 < bad_count < n
    return hits / total


def brute_force_min_pool(fraction, confidence, max_pool=30):
    for pool in range(2, max_pool + 1):
        mixed = sum(1 for bits in itertools.product([0, 1], repeat=pool) if 0 < sum(bits) < pool)
        # each pattern has probability fraction^k (1-fraction)^(pool-k); fraction 0.5 makes them equal
        if mixed / 2 ** pool >= confidence:
            return pool
    return None


@pytest.mark.parametrize("n", range(1, 11))
def test_detection_probability_matches_enumeration(n):
    assert detection_probability(n, 10, 5) == pytest.approx(enumerated_detection(n), abs=1e-15)


def test_detection_probability_examples():
    assert detection_probability(2, 10, 5) == pytest.approx(5 / 9)
    assert detection_probability(1, 10, 5) == 0.0
    assert detection_probability(10, 10, 5) == 1.0
    assert detection_probability(4, 10, 0) == 0.0
    with pytest.raises(DomainError):
        detection_probability(11, 10, 5)
    with pytest.raises(DomainError):
        detection_probability(3, 10, 11)


def test_detection_probability_monte_carlo():
    rng = np.random.default_rng(0)
    for n in (2, 3, 5):
        draws = np.array([rng.choice(10, size=n, replace=False) for _ in range(100_000)])
        bad = (draws < 5).sum(axis=1)
        estimate = ((bad > 0) & (bad < n)).mean()
        assert abs(estimate - detection_probability(n, 10, 5)) < 1e-2


@pytest.mark.parametrize("pool", [2, 4, 6, 10])
def test_run_detection_monte_carlo_agrees_with_exact(pool):
    exact = run_detection_probability([0.3, 0.5], 2, pool, method="exact")
    estimate = run_detection_probability([0.3, 0.5], 2, pool, method="monte_carlo", replicates=100_000)
    assert abs(exact - estimate) < 1e-2


@pytest.mark.parametrize("method", ["exact", "monte_carlo"])
def test_min_cluster_size_matches_brute_force(method):
    expected = brute_force_min_pool(0.5, 0.95)
    assert expected == 6
    assert min_cluster_size([0.5], 1, 0.95, method=method) == expected


def test_min_cluster_size_edges():
    assert min_cluster_size([0.5], 1, 0.01, method="exact") == 2
    assert min_cluster_size([0.0], 1, 0.95) is None
    assert min_cluster_size([1.0, 0.5], 1, 0.95) is None
    assert min_cluster_size([0.5], 1, 0.999999, method="exact", max_pool=5) is None
    with pytest.raises(DomainError):
        min_cluster_size([], 1, 0.95)
    with pytest.raises(DomainError):
        min_cluster_size([0.5], 0, 0.95)
    with pytest.raises(DomainError):
        min_cluster_size([0.5], 1, 1.0)


def test_more_unstable_configs_need_bigger_pools():
    one = min_cluster_size([0.5], 1, 0.95, method="exact")
    five = min_cluster_size([0.5], 5, 0.95, method="exact")
    assert five > one


def test_detection_table():
    table = detection_table([0.5], 1, 10)
    assert list(table["pool"]) == list(range(2, 11))
    assert table["probability"].is_monotonic_increasing
    assert table["probability"].iloc[0] == pytest.approx(0.5)


def test_cov_examples():
    assert cov([5.0, 5.0, 5.0]) == 0.0
    assert cov([2.0, 4.0]) == pytest.approx(1 / 3)
    with pytest.raises(DomainError):
        cov([])
    with pytest.raises(DegenerateInputError):
        cov([-1.0, 1.0])
    stats = summarize([90.0, 100.0, 110.0])
    assert stats["mean"] == pytest.approx(100.0)
    assert stats["relative_range"] == pytest.approx(0.2)
    assert stats["count"] == 3


def test_curve_is_best_so_far():
    curve = ConvergenceCurve.from_scores([3.0, 1.0, 5.0, 4.0])
    assert curve.values == [3.0, 3.0, 5.0, 5.0]
    low = ConvergenceCurve.from_scores([3.0, 1.0, 5.0, 0.5], direction="minimize")
    assert low.values == [3.0, 1.0, 1.0, 0.5]
    assert curve.first_hit(5.0) == 3
    assert curve.first_hit(6.0) is None
    assert curve.value_at(10) == 5.0


def test_time_to_optimal_ratio():
    a = ConvergenceCurve.from_scores([0.0] * 39 + [1.0] * 61)
    b = ConvergenceCurve.from_scores([0.0] * 99 + [1.0])
    result = time_to_optimal(a, b, 0.95)
    assert (result.hit_a, result.hit_b) == (40, 100)
    assert result.ratio == 2.5
    assert not result.unbounded


def test_time_to_optimal_unbounded():
    a = ConvergenceCurve.from_scores([0.0] * 9 + [1.0])
    b = ConvergenceCurve.from_scores([0.0] * 100)
    result = time_to_optimal(a, b, 0.95, optimum=1.0)
    assert result.unbounded
    assert result.hit_b is None
    assert result.max_iteration == 100
    with pytest.raises(DomainError):
        time_to_optimal(a, b, 0.0)


def test_mean_curve_holds_last_value():
    averaged = mean_curve([ConvergenceCurve.from_scores([1.0, 3.0]), ConvergenceCurve.from_scores([2.0])])
    assert averaged.values == [1.5, 2.5]


def test_deployment_on_smooth_environment_has_no_spread():
    space, landscape, _ = make_environment("smooth", seed=0, sigma=0.0)
    fresh = deployment_workers(landscape, 0, 10)
    report = deployment_eval(default_config(space), landscape, fresh)
    assert report.stddev == 0.0
    assert report.cov == 0.0
    assert report.crashed == 0
    assert report.mean == pytest.approx(landscape.surface(default_config(space)))


def test_deployment_matches_noise_free_oracle():
    space, landscape, _ = make_environment("planted-unstable", seed=2, sigma=0.0)
    fresh = deployment_workers(landscape, 2, 10)
    config = default_config(space)
    for region in landscape.regions:
        if region.predicate.equals:
            continue
        values = dict(config.values)
        for name, (low, high) in region.predicate.bounds.items():
            param = space[name]
            values[name] = param.from_unit((param.to_unit(low) + param.to_unit(high)) / 2)
        config = space.make_config(values)
        break
    oracle = [landscape.noise_free(w, config) for w in fresh]
    report = deployment_eval(config, landscape, fresh, replicates=2)
    assert len(report.performances) == 20
    assert report.mean == pytest.approx(np.mean(oracle))
    assert report.stddev == pytest.approx(np.std(oracle))
    assert deployment_truth(config, landscape, fresh) == pytest.approx(min(oracle))


def test_deployment_report_with_crashes():
    report = DeploymentReport.from_samples(3, [0, 1, 2], [100.0, None, 80.0])
    assert report.crashed == 1
    assert report.mean == 90.0
    empty = DeploymentReport.from_samples(3, [0], [None])
    assert math.isnan(empty.mean)


def test_noise_free_run_has_no_adjustment_error():
    config = RunConfig(mode="traditional", env_name="smooth", command=None, space_path=None, seed=0,
                       trials=20, pool=10, threshold=0.30, model=False, detector=True, out="unused", sigma=0.0)
    catalog = Catalog()
    tuner, _ = build_tuner(config, catalog)
    tuner.run()
    space, landscape, _ = make_environment("smooth", seed=0, sigma=0.0)
    errors = adjustment_error(catalog, space, landscape)
    assert errors["raw_error"] == pytest.approx(0.0, abs=1e-12)
    assert errors["score_error"] == pytest.approx(0.0, abs=1e-12)
    assert errors["evaluations"] == 10

    curves = convergence_curves(catalog, space, landscape, deployment_workers(landscape, 0, 10))
    assert len(curves["truth"]) == len(curves["reported"]) == 20
    assert curves["truth"].values == pytest.approx(curves["reported"].values)


def test_writers(tmp_path):
    write_curves_csv([ConvergenceCurve.from_scores([1.0, 2.0], seed=4, mode="traditional")], tmp_path / "curve.csv")
    frame = pd.read_csv(tmp_path / "curve.csv")
    assert list(frame.columns) == ["iteration", "best_so_far", "seed", "mode", "kind"]
    assert list(frame["best_so_far"]) == [1.0, 2.0]

    write_deploy_csv([], tmp_path / "deploy.csv")
    assert list(pd.read_csv(tmp_path / "deploy.csv").columns) == ["config_id", "worker", "performance"]

    write_summary({"ratio": math.inf, "runs": [1]}, tmp_path / "summary.json")
    with open(tmp_path / "summary.json") as f:
        assert json.load(f)["runs"] == [1]
