"""
Tests for the worker pool, the pending queue and the runners.
"""
import os
import sys
import time

import pytest

# Add project root to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.backends import BaseBackend
from src.catalog import Catalog, TrialRecord
from src.cluster import Cluster, SimulatedRunner, ThreadedRunner, WorkerHandle
from src.configspace import ConfigSpace, ParameterDef
from src.errors import CapacityError, StateError


class FixedBackend(BaseBackend):
    """Reports worker_id + 100 for every config."""

    def __init__(self, delay_s=0.0):
        super().__init__("fixed")
        self.delay_s = delay_s

    def evaluate(self, config, worker_id, budget, ordinal):
        if self.delay_s:
            time.sleep(self.delay_s)
        return self._record(config, worker_id, budget, 100.0 + worker_id, {"ordinal": float(ordinal)}, 1.0)


SPACE = ConfigSpace([ParameterDef("x", "continuous", 0.0, 1.0, default=0.5)])


def config(x):
    return SPACE.make_config({"x": x})


def cluster_of(n, catalog=None):
    return Cluster([WorkerHandle(w, FixedBackend()) for w in range(n)], catalog or Catalog())


def seed_samples(catalog, cfg, workers):
    for w in workers:
        catalog.append(TrialRecord(0, cfg.config_id, w, 1, 50.0))


def test_enqueue_reuses_prior_samples():
    catalog = Catalog()
    cfg = config(0.1)
    seed_samples(catalog, cfg, [1])
    cluster = cluster_of(3, catalog)
    pending = cluster.enqueue(cfg, 3)
    assert pending.remaining == 2
    assert pending.already_sampled_workers == frozenset({1})
    assert cluster.queued_trials == 2


def test_enqueue_counts_specific_prior_workers():
    catalog = Catalog()
    cfg = config(0.2)
    seed_samples(catalog, cfg, [0, 2, 3, 5, 6, 8, 9])
    cluster = cluster_of(10, catalog)
    pending = cluster.enqueue(cfg, 10)
    assert pending.remaining == 3
    assignments = cluster.dispatch()
    assert sorted(a.worker_id for a in assignments) == [1, 4, 7]
    assert [a.ordinal for a in assignments] == [7, 8, 9]


def test_enqueue_errors_and_noops():
    catalog = Catalog()
    cfg = config(0.3)
    seed_samples(catalog, cfg, [0, 1, 2])
    cluster = cluster_of(3, catalog)
    assert cluster.enqueue(cfg, 3) is None
    with pytest.raises(CapacityError):
        cluster.enqueue(cfg, 4)
    with pytest.raises(CapacityError):
        cluster.enqueue(config(0.4), 2, allowed_workers=[0])
    with pytest.raises(CapacityError):
        Cluster([], Catalog())


def test_dispatch_lets_later_evaluations_overtake():
    catalog = Catalog()
    blocked, free = config(0.5), config(0.6)
    seed_samples(catalog, blocked, [1, 2])
    cluster = cluster_of(3, catalog)

    busy = cluster.enqueue(config(0.7), 1, allowed_workers=[0])
    assert [a.worker_id for a in cluster.dispatch()] == [0]
    assert busy.unassigned == 0

    cluster.enqueue(blocked, 3)
    cluster.enqueue(free, 1)
    assignments = cluster.dispatch()
    assert [(a.worker_id, a.config.config_id) for a in assignments] == [(1, free.config_id)]
    assert cluster.queued_trials == 1

    cluster.complete(0)
    assignments = cluster.dispatch()
    assert [(a.worker_id, a.config.config_id) for a in assignments] == [(0, blocked.config_id)]


def test_dispatch_with_all_workers_busy_is_empty():
    cluster = cluster_of(2)
    cluster.enqueue(config(0.1), 2)
    assert len(cluster.dispatch()) == 2
    cluster.enqueue(config(0.2), 1)
    assert cluster.dispatch() == []
    assert cluster.idle_workers == []
    assert cluster.in_flight == 2


def test_complete_tracks_evaluation_progress():
    cluster = cluster_of(2)
    pending = cluster.enqueue(config(0.9), 2)
    cluster.dispatch()
    assert cluster.complete(1) == (pending, False)
    assert cluster.complete(0) == (pending, True)
    with pytest.raises(StateError):
        cluster.complete(0)


def test_execute_uses_the_worker_backend():
    cluster = cluster_of(3)
    cluster.enqueue(config(0.25), 2)
    records = [cluster.execute(a) for a in cluster.dispatch()]
    assert [r.performance for r in records] == [100.0, 101.0]
    assert all(r.trial_id == 0 for r in records)


def test_simulated_runner_orders_by_finish_then_worker():
    runner = SimulatedRunner(trial_seconds=5.0)
    cfg = config(0.1)
    runner.submit(2, lambda: TrialRecord(0, cfg.config_id, 2, 1, 1.0, wall_time_s=3.0))
    runner.submit(0, lambda: TrialRecord(0, cfg.config_id, 0, 1, 1.0, wall_time_s=3.0))
    runner.submit(1, lambda: TrialRecord(0, cfg.config_id, 1, 1, 1.0, wall_time_s=1.0))
    assert runner.pending_count == 3
    assert [runner.next_completion()[0] for _ in range(3)] == [1, 0, 2]
    assert runner.elapsed() == 3.0
    with pytest.raises(StateError):
        runner.next_completion()


def test_simulated_runner_defaults_trial_length():
    runner = SimulatedRunner(trial_seconds=7.0)
    runner.submit(0, lambda: TrialRecord(0, 1, 0, 1, 1.0))
    runner.next_completion()
    assert runner.elapsed() == 7.0


def test_threaded_runner_returns_every_completion():
    cluster = Cluster([WorkerHandle(w, FixedBackend(delay_s=0.01)) for w in range(4)], Catalog())
    cluster.enqueue(config(0.3), 4)
    runner = ThreadedRunner(max_workers=4)
    try:
        for assignment in cluster.dispatch():
            runner.submit(assignment.worker_id, lambda a=assignment: cluster.execute(a))
        finished = sorted(runner.next_completion()[0] for _ in range(4))
        assert finished == [0, 1, 2, 3]
        assert runner.pending_count == 0
        assert runner.elapsed() > 0
    finally:
        runner.shutdown()
