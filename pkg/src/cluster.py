"""
Cluster

Fixed worker pool and the eligibility-constrained pending queue.

- enqueue reuses samples taken at lower budgets; their workers become ineligible
- dispatch is FIFO, but a later evaluation may overtake one whose eligible
  workers are all busy
- runners execute dispatched trials and hand completions back one at a time
"""
import heapq
import logging
import time
from concurrent.futures import FIRST_COMPLETED, Future, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Set, Tuple

from .backends import BaseBackend
from .catalog import Catalog, TrialRecord
from .config import SIM_TRIAL_SECONDS
from .configspace import Configuration
from .errors import CapacityError, StateError

logger = logging.getLogger(__name__)


@dataclass
class WorkerHandle:
    worker_id: int
    backend: BaseBackend
    busy: bool = False


@dataclass
class PendingEvaluation:
    config: Configuration
    target_budget: int
    already_sampled_workers: FrozenSet[int]
    remaining: int
    sequence: int
    allowed_workers: Optional[FrozenSet[int]] = None
    assigned: Set[int] = field(default_factory=set)
    completed: int = 0

    @property
    def unassigned(self) -> int:
        return self.remaining - len(self.assigned)

    @property
    def is_done(self) -> bool:
        return self.completed >= self.remaining

    def is_eligible(self, worker_id: int) -> bool:
        if worker_id in self.already_sampled_workers or worker_id in self.assigned:
            return False
        return self.allowed_workers is None or worker_id in self.allowed_workers


@dataclass(frozen=True)
class Assignment:
    worker_id: int
    config: Configuration
    budget: int
    ordinal: int


class Cluster:
    """Worker pool plus pending queue. Owned by the coordination loop."""

    def __init__(self, workers: Iterable[WorkerHandle], catalog: Catalog):
        self.workers: Dict[int, WorkerHandle] = {w.worker_id: w for w in workers}
        if not self.workers:
            raise CapacityError("A cluster needs at least one worker")
        self.catalog = catalog
        self.queue: List[PendingEvaluation] = []
        self._running: Dict[int, PendingEvaluation] = {}
        self._sequence = 0

    @property
    def pool_size(self) -> int:
        return len(self.workers)

    @property
    def worker_ids(self) -> List[int]:
        return sorted(self.workers)

    @property
    def idle_workers(self) -> List[int]:
        return [w for w in self.worker_ids if not self.workers[w].busy]

    @property
    def in_flight(self) -> int:
        return len(self._running)

    @property
    def queued_trials(self) -> int:
        return sum(p.unassigned for p in self.queue)

    def enqueue(self, config: Configuration, target_budget: int,
                allowed_workers: Optional[Iterable[int]] = None) -> Optional[PendingEvaluation]:
        """
        Queue the samples a config still needs to reach target_budget.

        Returns None when the config already has target_budget samples.
        """
        if target_budget > self.pool_size:
            raise CapacityError(f"Budget {target_budget} exceeds the pool of {self.pool_size} workers")
        prior = frozenset(self.catalog.workers_for(config.config_id))
        if len(prior) >= target_budget:
            return None

        allowed = frozenset(allowed_workers) if allowed_workers is not None else None
        candidates = set(self.workers) - prior
        if allowed is not None:
            candidates &= allowed
        remaining = target_budget - len(prior)
        if len(candidates) < remaining:
            raise CapacityError(
                f"Config {config.config_id} needs {remaining} new workers but only {len(candidates)} are eligible")

        self._sequence += 1
        pending = PendingEvaluation(config, target_budget, prior, remaining, self._sequence, allowed)
        self.queue.append(pending)
        logger.debug(f"  Queued config {config.config_id} at budget {target_budget}: "
                     f"{remaining} new samples, ineligible {sorted(prior)}")
        return pending

    def dispatch(self) -> List[Assignment]:
        """Assign idle, eligible workers to queued evaluations in FIFO order."""
        assignments = []
        idle = self.idle_workers
        for pending in list(self.queue):
            if not idle:
                break
            for worker_id in list(idle):
                if pending.unassigned == 0:
                    break
                if not pending.is_eligible(worker_id):
                    continue
                ordinal = len(pending.already_sampled_workers) + len(pending.assigned)
                pending.assigned.add(worker_id)
                self.workers[worker_id].busy = True
                self._running[worker_id] = pending
                idle.remove(worker_id)
                assignments.append(Assignment(worker_id, pending.config, pending.target_budget, ordinal))
            if pending.unassigned == 0:
                self.queue.remove(pending)
        return assignments

    def execute(self, assignment: Assignment) -> TrialRecord:
        worker = self.workers[assignment.worker_id]
        return worker.backend.evaluate(assignment.config, assignment.worker_id, assignment.budget,
                                       assignment.ordinal)

    def complete(self, worker_id: int) -> Tuple[PendingEvaluation, bool]:
        """Free a worker; returns its evaluation and whether that evaluation is now complete."""
        pending = self._running.pop(worker_id, None)
        if pending is None:
            raise StateError(f"Worker {worker_id} has no trial in flight")
        self.workers[worker_id].busy = False
        pending.completed += 1
        return pending, pending.is_done


# ============= RUNNERS =============

class SimulatedRunner:
    """Virtual-clock runner: trials execute inline, completions ordered by (finish time, worker)."""

    def __init__(self, trial_seconds: float = SIM_TRIAL_SECONDS):
        self.trial_seconds = trial_seconds
        self.now = 0.0
        self._events: List[Tuple[float, int, int, TrialRecord]] = []
        self._counter = 0

    @property
    def pending_count(self) -> int:
        return len(self._events)

    def submit(self, worker_id: int, job: Callable[[], TrialRecord]):
        record = job()
        duration = record.wall_time_s if record.wall_time_s > 0 else self.trial_seconds
        self._counter += 1
        heapq.heappush(self._events, (self.now + duration, worker_id, self._counter, record))

    def next_completion(self) -> Tuple[int, TrialRecord]:
        if not self._events:
            raise StateError("No trial in flight")
        finish, worker_id, _, record = heapq.heappop(self._events)
        self.now = max(self.now, finish)
        return worker_id, record

    def elapsed(self) -> float:
        return self.now

    def shutdown(self):
        self._events.clear()


class ThreadedRunner:
    """One thread per worker; completions returned as they finish, lowest worker id first on ties."""

    def __init__(self, max_workers: int):
        self._executor = ThreadPoolExecutor(max_workers=max_workers)
        self._futures: Dict[Future, int] = {}
        self._done: List[Tuple[int, TrialRecord]] = []
        self._clock = None

    @property
    def pending_count(self) -> int:
        return len(self._futures) + len(self._done)

    def submit(self, worker_id: int, job: Callable[[], TrialRecord]):
        if self._clock is None:
            self._clock = time.monotonic()
        self._futures[self._executor.submit(job)] = worker_id

    def next_completion(self) -> Tuple[int, TrialRecord]:
        if not self._done:
            if not self._futures:
                raise StateError("No trial in flight")
            done, _ = wait(list(self._futures), return_when=FIRST_COMPLETED)
            for future in done:
                worker_id = self._futures.pop(future)
                self._done.append((worker_id, future.result()))
            self._done.sort(key=lambda item: item[0], reverse=True)
        return self._done.pop()

    def elapsed(self) -> float:
        return 0.0 if self._clock is None else time.monotonic() - self._clock

    def shutdown(self):
        self._executor.shutdown(wait=True)
