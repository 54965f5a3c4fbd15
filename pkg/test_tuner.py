"""
End-to-end tests of the tuning loop on simulated clusters.
"""
import os
import sys

import pytest

# Add project root to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from app import RunConfig, build_tuner
from src.catalog import EVALUATIONS_FILE, TRIALS_FILE, Catalog
from src.config import SIM_TRIAL_SECONDS
from src.configspace import default_config
from src.errors import StateError
from src.noise_model import NoiseModel
from src.simulator import default_space
from src.stability import AggregationPolicy, StabilityAggregator
from src.tuner import Tuner, replay


def run_config(out="unused", **overrides):
    values = dict(mode="tuna", env_name="planted-unstable", command=None, space_path=None, seed=0,
                  trials=100, pool=10, threshold=0.30, model=True, detector=True, out=out)
    values.update(overrides)
    return RunConfig(**values)


def tune(directory=None, **overrides):
    catalog = Catalog(str(directory), fsync=False) if directory else Catalog()
    tuner, manifest = build_tuner(run_config(str(directory), **overrides), catalog)
    result = tuner.run()
    return catalog, result, manifest


def assert_exclusion(catalog):
    seen = set()
    for record in catalog.records():
        key = (record.config_id, record.worker_id)
        assert key not in seen
        seen.add(key)


def assert_full_max_budget(catalog, max_budget=10):
    for evaluation in catalog.evaluations():
        if evaluation.budget == max_budget:
            assert len(evaluation.worker_ids) == max_budget
            assert len(set(evaluation.worker_ids)) == max_budget


@pytest.fixture(scope="module")
def tuna_run():
    return tune(trials=150, seed=1)


def test_tuna_run_respects_the_trial_cap(tuna_run):
    catalog, result, manifest = tuna_run
    assert 0 < result.trial_count <= 150
    assert result.trial_count == catalog.trial_count
    assert result.best_config_id is not None
    assert manifest["policy"]["rung_budgets"] == [1, 3, 10]
    assert manifest["default_config_id"] == default_config(default_space()).config_id
    assert manifest["aggregator_info"]["threshold"] == 0.30
    assert manifest["backend_info"]["type"] == "SimulatedBackend"


def test_tuna_run_never_repeats_a_worker(tuna_run):
    catalog, _, _ = tuna_run
    assert_exclusion(catalog)
    assert_full_max_budget(catalog)


def test_evaluations_follow_the_rungs(tuna_run):
    catalog, _, _ = tuna_run
    budgets = {}
    for evaluation in catalog.evaluations():
        assert len(evaluation.trial_ids) == evaluation.budget
        budgets.setdefault(evaluation.config_id, []).append(evaluation.budget)
    for sequence in budgets.values():
        assert sequence == [1, 3, 10][:len(sequence)]
    assert any(10 in sequence for sequence in budgets.values())


def test_first_max_budget_evaluation_is_unadjusted(tuna_run):
    catalog, _, _ = tuna_run
    first = next(e for e in catalog.evaluations() if e.budget == 10)
    assert first.adjusted == first.raw
    assert first.model_rows == 0


def test_unstable_verdicts_are_penalized(tuna_run):
    catalog, _, _ = tuna_run
    for evaluation in catalog.evaluations():
        if evaluation.stability.is_unstable and evaluation.score is not None:
            assert evaluation.score == pytest.approx(min(evaluation.adjusted) / 2)


def test_traditional_mode_uses_one_worker():
    catalog, result, manifest = tune(mode="traditional", trials=30)
    assert {r.worker_id for r in catalog.records()} == {0}
    assert {e.budget for e in catalog.evaluations()} == {1}
    assert result.trial_count == 30
    assert manifest["worker_ids"] == [0]
    assert not manifest["policy"]["model_enabled"]
    assert not manifest["policy"]["detector_enabled"]


def test_naive_mode_samples_every_config_everywhere():
    catalog, result, _ = tune(mode="naive_distributed", trials=100, model=False)
    assert result.trial_count == 100
    for evaluation in catalog.evaluations():
        assert evaluation.budget == 10
        assert sorted(evaluation.worker_ids) == list(range(10))


def test_extended_traditional_matches_reference_trial_count(tmp_path):
    reference, result, _ = tune(tmp_path / "reference", trials=40, seed=2)
    catalog, extended, manifest = tune(mode="extended_traditional", trials=5, seed=2,
                                       match_catalog=str(tmp_path / "reference"))
    assert extended.trial_count == result.trial_count
    assert manifest["policy"]["max_trials"] == reference.trial_count
    assert {r.worker_id for r in catalog.records()} == {0}


def test_runs_are_byte_identical(tmp_path):
    tune(tmp_path / "a", trials=60, seed=5)
    tune(tmp_path / "b", trials=60, seed=5)
    for name in (TRIALS_FILE, EVALUATIONS_FILE):
        with open(tmp_path / "a" / name, "rb") as a, open(tmp_path / "b" / name, "rb") as b:
            assert a.read() == b.read()


def test_time_budget_stops_asking():
    catalog, result, _ = tune(trials=1000, time_budget_s=3 * SIM_TRIAL_SECONDS, model=False)
    assert result.trial_count < 1000
    assert result.elapsed_s >= 3 * SIM_TRIAL_SECONDS
    assert_exclusion(catalog)


def test_tuner_needs_a_stop_criterion():
    catalog = Catalog()
    tuner, _ = build_tuner(run_config(), catalog)
    with pytest.raises(StateError):
        Tuner(tuner.space, tuner.optimizer, tuner.cluster, tuner.runner, catalog, tuner.aggregator,
              tuner.policy, max_trials=None, time_budget_s=None)


def test_replay_without_model_reproduces_the_run():
    catalog, _, manifest = tune(trials=80, seed=3, model=False)
    aggregator = StabilityAggregator(AggregationPolicy("worst_case", "maximize"), threshold=0.30)
    replayed, rows = replay(catalog, aggregator, None, 10, default_config_id=manifest["default_config_id"])
    assert len(rows) == len(catalog.evaluations())
    assert all(row["original_unstable"] == row["replay_unstable"] for row in rows)
    assert all(row["original_score"] == row["replay_score"] for row in rows)
    assert replayed.trial_count == catalog.trial_count


def test_replay_with_model_reproduces_the_run(tuna_run):
    catalog, _, manifest = tuna_run
    aggregator = StabilityAggregator(AggregationPolicy("worst_case", "maximize"), threshold=0.30)
    model = NoiseModel(manifest["worker_ids"], seed=1)
    _, rows = replay(catalog, aggregator, model, 10, default_config_id=manifest["default_config_id"])
    for row, evaluation in zip(rows, catalog.evaluations()):
        assert row["replay_score"] == pytest.approx(evaluation.score, rel=1e-9)


def training_rows_before(records_by_id, evaluations, max_budget=10):
    """Rows of stable configs whose latest evaluation so far ran at the max budget."""
    latest = {}
    for evaluation in evaluations:
        latest[evaluation.config_id] = evaluation
    rows = []
    for evaluation in latest.values():
        if evaluation.budget != max_budget or evaluation.stability.is_unstable:
            continue
        for trial_id in evaluation.trial_ids:
            record = records_by_id[trial_id]
            if record.status == "ok":
                rows.append((record.metrics, record.worker_id, record.performance, record.config_id))
    return rows


@pytest.fixture(scope="module")
def warm_run():
    return tune(trials=300, seed=1)


def test_adjustment_uses_only_earlier_evaluations(warm_run):
    catalog, _, manifest = warm_run
    by_id = {r.trial_id: r for r in catalog.records()}
    evaluations = catalog.evaluations()
    max_budget = [i for i, e in enumerate(evaluations) if e.budget == 10]
    assert len(max_budget) >= 3

    # the second max-budget completion only has one earlier config to learn from
    second = evaluations[max_budget[1]]
    assert second.model_rows == 0
    assert second.adjusted == second.raw

    leaky_differs = False
    for index in max_budget:
        evaluation = evaluations[index]
        rows = training_rows_before(by_id, evaluations[:index])
        assert evaluation.config_id not in {row[3] for row in rows}
        model = NoiseModel(manifest["worker_ids"], seed=1).train(rows)
        leaky = NoiseModel(manifest["worker_ids"], seed=1).train(training_rows_before(by_id, evaluations[:index + 1]))
        assert evaluation.model_rows == model.trained_row_count

        for trial_id, stored in zip(evaluation.trial_ids, evaluation.adjusted):
            record = by_id[trial_id]
            if record.status != "ok":
                continue
            args = (record.metrics, record.worker_id, record.performance, evaluation.stability.is_unstable)
            assert model.adjust(*args) == pytest.approx(stored, rel=1e-12)
            if leaky.adjust(*args) != pytest.approx(stored, rel=1e-12):
                leaky_differs = True

    assert any(evaluations[i].model_rows > 0 for i in max_budget)
    assert leaky_differs


def test_trials_carry_their_latest_adjusted_value(warm_run):
    catalog, _, _ = warm_run
    latest = {}
    for evaluation in catalog.evaluations():
        for trial_id, adjusted in zip(evaluation.trial_ids, evaluation.adjusted):
            latest[trial_id] = adjusted
    for record in catalog.records():
        if record.status == "ok" and record.trial_id in latest:
            assert record.adjusted_performance == latest[record.trial_id]
    assert any(r.adjusted_performance != r.performance for r in catalog.records()
               if r.adjusted_performance is not None)


def test_noise_free_modes_agree_on_the_best_config():
    noise_free = dict(env_name="smooth", sigma=0.0, optimizer="random", seed=7)
    tuna, _, _ = tune(trials=100, **noise_free)
    explored = len({r.config_id for r in tuna.records()})
    traditional, _, _ = tune(mode="traditional", trials=explored, **noise_free)
    naive, _, _ = tune(mode="naive_distributed", trials=10 * explored, **noise_free)

    catalogs = (tuna, traditional, naive)
    assert len({frozenset(r.config_id for r in c.records()) for c in catalogs}) == 1
    assert len({c.best_config("maximize") for c in catalogs}) == 1
    for catalog in catalogs:
        assert all(not e.stability.is_unstable for e in catalog.evaluations())


def test_replay_with_lower_threshold_flags_more():
    catalog, _, manifest = tune(trials=80, seed=3, model=False)
    strict = StabilityAggregator(AggregationPolicy("worst_case", "maximize"), threshold=0.01)
    _, rows = replay(catalog, strict, None, 10, default_config_id=manifest["default_config_id"])
    assert all(row["replay_unstable"] or not row["original_unstable"] for row in rows)
    assert sum(row["replay_unstable"] for row in rows) >= sum(row["original_unstable"] for row in rows)


def test_crashing_configs_score_with_the_default_reference():
    override = {"crash_regions": [{"equals": {"enable_bitmapscan": "off"}}]}
    catalog, result, _ = tune(trials=60, seed=4, env_override=override, model=False)
    crashed = [r for r in catalog.records() if r.status == "crashed"]
    assert result.failed_trials == len(crashed)
    assert_exclusion(catalog)
    for evaluation in catalog.evaluations():
        if any(value is None for value in evaluation.raw):
            assert evaluation.score is not None


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_fuzzed_long_runs_keep_exclusion(seed):
    catalog, result, _ = tune(trials=1000, seed=seed, optimizer="random", model=(seed == 0))
    assert result.trial_count > 900
    assert_exclusion(catalog)
    assert_full_max_budget(catalog)
