"""
Tuning Orchestrator

Coordinates the optimizer, the cluster, the catalog, the stability detector and the
noise model. One completed (config, budget) evaluation flows through:

    catalog append -> detector -> noise adjustment -> aggregation -> tell
    -> noise-model refit (max budget only)

Adjustment always uses the model as it was before the evaluation's own rows were added.
"""
import logging
from dataclasses import dataclass, field
from functools import partial
from typing import Any, Dict, List, Optional, Sequence, Tuple

from .catalog import Catalog, EvaluationRecord, TrialRecord
from .cluster import Cluster
from .configspace import ConfigSpace, Configuration, default_config
from .errors import ExclusionViolationError, InvariantViolationError, StateError
from .noise_model import NoiseModel
from .optimizer import BaseOptimizer, SchedulingPolicy
from .stability import (StabilityAggregator, StabilityVerdict, crash_penalty_value,
                        substitute_crashes)

logger = logging.getLogger(__name__)


@dataclass
class ScoredEvaluation:
    verdict: StabilityVerdict
    raw: List[Optional[float]]
    adjusted: List[Optional[float]]
    score: Optional[float]


@dataclass
class TuneResult:
    best_config_id: Optional[int]
    best_values: Optional[Dict[str, Any]]
    best_score: Optional[float]
    verdict: Optional[StabilityVerdict]
    trial_count: int
    failed_trials: int
    evaluations: int
    elapsed_s: float
    noise_model: Dict[str, Any] = field(default_factory=dict)

    @property
    def failure_rate(self) -> float:
        return self.failed_trials / self.trial_count if self.trial_count else 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "config_id": self.best_config_id,
            "values": self.best_values,
            "score": self.best_score,
            "verdict": self.verdict.to_dict() if self.verdict else None,
            "trial_count": self.trial_count,
            "failed_trials": self.failed_trials,
            "evaluations": self.evaluations,
            "elapsed_s": self.elapsed_s,
            "noise_model": self.noise_model,
        }


def score_samples(config_id: int, records: Sequence[TrialRecord], aggregator: StabilityAggregator,
                  noise_model: Optional[NoiseModel], crash_value: Optional[float]) -> ScoredEvaluation:
    """Detector, noise adjustment and aggregation over all samples of one config."""
    raw = [r.performance if r.status == "ok" else None for r in records]
    samples = substitute_crashes(raw, crash_value)
    if not samples:
        verdict = StabilityVerdict(config_id, float("inf"), True, aggregator.threshold)
        return ScoredEvaluation(verdict, raw, [None] * len(raw), None)

    verdict = aggregator.detect(config_id, samples)
    adjusted: List[Optional[float]] = []
    for record in records:
        if record.status != "ok":
            adjusted.append(crash_value)
        elif noise_model is not None:
            adjusted.append(noise_model.adjust(record.metrics, record.worker_id, record.performance,
                                               verdict.is_unstable))
        else:
            adjusted.append(record.performance)
    score = aggregator.aggregate([a for a in adjusted if a is not None], verdict)
    return ScoredEvaluation(verdict, raw, adjusted, score)


class Tuner:
    """Runs one tuning session to its stop criterion."""

    def __init__(self, space: ConfigSpace, optimizer: BaseOptimizer, cluster: Cluster, runner,
                 catalog: Catalog, aggregator: StabilityAggregator, policy: SchedulingPolicy,
                 noise_model: Optional[NoiseModel] = None, max_trials: Optional[int] = 200,
                 time_budget_s: Optional[float] = None):
        """
        Initialize the tuner.

        Args:
            space: configuration space
            optimizer: ask/tell optimizer
            cluster: worker pool and pending queue
            runner: SimulatedRunner or ThreadedRunner executing dispatched trials
            catalog: trial store
            aggregator: stability detector and aggregation policy
            policy: scheduling policy of the sampling mode
            noise_model: noise adjuster, None to disable
            max_trials: stop asking once this many trials are committed
            time_budget_s: stop asking once this much (virtual or wall) time has elapsed
        """
        if max_trials is None and time_budget_s is None:
            raise StateError("A run needs a trial cap or a time budget")
        self.space = space
        self.optimizer = optimizer
        self.cluster = cluster
        self.runner = runner
        self.catalog = catalog
        self.aggregator = aggregator
        self.policy = policy
        self.noise_model = noise_model
        self.max_trials = max_trials
        self.time_budget_s = time_budget_s
        self.direction = optimizer.objective.direction
        self._default_id = default_config(space).config_id

        self.committed = 0
        self.completed = 0
        self.failed = 0

    # ============= MAIN LOOP =============

    def run(self) -> TuneResult:
        logger.info(f"🔄 Tuning in {self.policy.mode} mode: pool {self.cluster.pool_size}, "
                    f"rungs {list(self.policy.rung_budgets)}, cap {self.max_trials} trials")
        stopping = False
        try:
            while True:
                stopping = self._schedule(stopping)
                if self.runner.pending_count == 0:
                    if self.cluster.queue:
                        raise InvariantViolationError(
                            f"{len(self.cluster.queue)} queued evaluations can never be dispatched")
                    break
                worker_id, record = self.runner.next_completion()
                self._on_trial(worker_id, record)
        finally:
            self.optimizer.finish()
            self.runner.shutdown()
        return self._result()

    def _schedule(self, stopping: bool) -> bool:
        """Dispatch queued work; ask for more while workers stay idle. Returns the stop flag."""
        while True:
            for assignment in self.cluster.dispatch():
                self.runner.submit(assignment.worker_id, partial(self.cluster.execute, assignment))
            if stopping or not self.cluster.idle_workers:
                return stopping
            if not self._ask_and_enqueue():
                return True

    def _ask_and_enqueue(self) -> bool:
        if self.max_trials is not None and self.committed >= self.max_trials:
            logger.info(f"  ✓ Trial cap of {self.max_trials} reached")
            return False
        if self.time_budget_s is not None and self.runner.elapsed() >= self.time_budget_s:
            logger.info(f"  ✓ Time budget of {self.time_budget_s}s elapsed")
            return False

        suggestion = self.optimizer.ask()
        config, budget = suggestion.config, suggestion.budget
        needed = budget - len(self.catalog.workers_for(config.config_id))
        if self.max_trials is not None and self.committed + needed > self.max_trials:
            logger.info(f"  ✓ Next evaluation needs {needed} trials, {self.max_trials - self.committed} left in the cap")
            self.optimizer.discard(config, budget)
            return False

        self.catalog.register_config(config.config_id, config.values)
        pending = self.cluster.enqueue(config, budget)
        if pending is None:
            self._finish_evaluation(config, budget)
            return True
        self.committed += pending.remaining
        return True

    # ============= COMPLETIONS =============

    def _on_trial(self, worker_id: int, record: TrialRecord):
        try:
            trial_id = self.catalog.append(record)
        except ExclusionViolationError as e:
            raise InvariantViolationError(str(e)) from e

        self.completed += 1
        if record.status != "ok":
            self.failed += 1
            logger.warning(f"  ⚠️ Trial {trial_id}: config {record.config_id} {record.status} on worker {worker_id}")
        elif self.noise_model is not None:
            self.noise_model.observe_metrics(record.metrics)

        pending, done = self.cluster.complete(worker_id)
        if done:
            self._finish_evaluation(pending.config, pending.target_budget)

    def _crash_value(self) -> Optional[float]:
        reference = [r.performance for r in self.catalog.samples_for(self._default_id) if r.status == "ok"]
        if not reference:
            reference = [r.performance for r in self.catalog.records() if r.status == "ok"]
        return crash_penalty_value(reference, self.direction)

    def _finish_evaluation(self, config: Configuration, budget: int):
        records = self.catalog.samples_for(config.config_id)
        scored = score_samples(config.config_id, records, self.aggregator, self.noise_model, self._crash_value())

        self.catalog.record_evaluation(EvaluationRecord(
            evaluation_id=len(self.catalog.evaluations()) + 1,
            config_id=config.config_id,
            budget=budget,
            trial_ids=[r.trial_id for r in records],
            worker_ids=[r.worker_id for r in records],
            raw=scored.raw,
            adjusted=scored.adjusted,
            verdict=scored.verdict.to_dict(),
            score=scored.score,
            trial_count=self.catalog.trial_count,
            model_rows=self.noise_model.trained_row_count if self.noise_model else 0,
        ))

        if scored.score is None:
            logger.warning(f"  ⚠️ Config {config.config_id}: every sample failed, nothing to report")
            self.optimizer.discard(config, budget)
        else:
            self.optimizer.tell(config, budget, scored.score)
            flag = "⚠️ unstable" if scored.verdict.is_unstable else "✓"
            logger.info(f"  [{self.catalog.trial_count}/{self.max_trials or '-'}] config {config.config_id} "
                        f"@{budget}: {scored.score:.2f} (range {scored.verdict.relative_range:.3f}) {flag}")

        if budget == self.policy.max_budget and self.noise_model is not None:
            self.noise_model.train(self.catalog.training_rows(self.policy.max_budget))

    def _result(self) -> TuneResult:
        best_id = None
        try:
            best_id = self.catalog.best_config(self.direction, budget=self.policy.max_budget)
        except StateError:
            try:
                best_id = self.catalog.best_config(self.direction)
            except StateError:
                logger.warning("  ⚠️ No configuration produced a score")

        summary = self.catalog.summary(best_id) if best_id is not None else None
        return TuneResult(
            best_config_id=best_id,
            best_values=self.catalog.config_values(best_id) if best_id is not None else None,
            best_score=summary.reported_score if summary else None,
            verdict=summary.verdict if summary else None,
            trial_count=self.catalog.trial_count,
            failed_trials=self.failed,
            evaluations=len(self.catalog.evaluations()),
            elapsed_s=self.runner.elapsed(),
            noise_model=self.noise_model.get_info() if self.noise_model else {},
        )


# ============= REPLAY =============

def replay(source: Catalog, aggregator: StabilityAggregator, noise_model: Optional[NoiseModel],
           max_budget: int, default_config_id: Optional[int] = None) -> Tuple[Catalog, List[Dict[str, Any]]]:
    """
    Re-feed a finished run's evaluations through detector, noise model and aggregation.

    No trial is re-executed; the original trial order and evaluation order are kept.

    Returns:
        (replayed in-memory catalog, one comparison row per evaluation)
    """
    by_id = {r.trial_id: r for r in source.records()}
    target = Catalog()
    copied: Dict[int, int] = {}
    rows = []
    direction = aggregator.policy.direction

    for evaluation in source.evaluations():
        for trial_id in evaluation.trial_ids:
            if trial_id in copied:
                continue
            record = by_id.get(trial_id)
            if record is None:
                raise InvariantViolationError(f"Evaluation {evaluation.evaluation_id} refers to missing trial {trial_id}")
            copied[trial_id] = target.append(record)
            if noise_model is not None and record.status == "ok":
                noise_model.observe_metrics(record.metrics)

        records = target.samples_for(evaluation.config_id)
        reference = [r.performance for r in target.samples_for(default_config_id) if r.status == "ok"] \
            if default_config_id is not None else []
        if not reference:
            reference = [r.performance for r in target.records() if r.status == "ok"]
        scored = score_samples(evaluation.config_id, records, aggregator, noise_model,
                               crash_penalty_value(reference, direction))

        target.record_evaluation(EvaluationRecord(
            evaluation_id=evaluation.evaluation_id,
            config_id=evaluation.config_id,
            budget=evaluation.budget,
            trial_ids=[r.trial_id for r in records],
            worker_ids=[r.worker_id for r in records],
            raw=scored.raw,
            adjusted=scored.adjusted,
            verdict=scored.verdict.to_dict(),
            score=scored.score,
            trial_count=target.trial_count,
            model_rows=noise_model.trained_row_count if noise_model else 0,
        ))
        if evaluation.budget == max_budget and noise_model is not None:
            noise_model.train(target.training_rows(max_budget))

        original = evaluation.stability
        rows.append({
            "evaluation_id": evaluation.evaluation_id,
            "config_id": evaluation.config_id,
            "budget": evaluation.budget,
            "original_unstable": original.is_unstable,
            "replay_unstable": scored.verdict.is_unstable,
            "original_range": original.relative_range,
            "replay_range": scored.verdict.relative_range,
            "original_score": evaluation.score,
            "replay_score": scored.score,
        })
    logger.info(f"  ✓ Replayed {len(rows)} evaluations over {len(copied)} trials")
    return target, rows
