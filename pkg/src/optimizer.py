"""
Optimizers

Ask/tell configuration suggestion with Successive Halving over worker-count budgets.

- BaseOptimizer: initialization set, promotions, protocol bookkeeping
- ForestBOOptimizer: Expected Improvement against a forest surrogate
- RandomSearchOptimizer: seeded random proposals
- run_mode: scheduling policy of each sampling methodology
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
from scipy.stats import norm

from . import forest
from .config import (EI_CANDIDATES, FOREST_MIN_LEAF, INIT_CONFIGS, POOL_SIZE, PROMOTION_ETA,
                     RUNG_BUDGETS, SURROGATE_TREES)
from .configspace import (ConfigSpace, Configuration, decode, default_config, encode,
                          sample_encoded, sample_random)
from .errors import ProtocolError, StateError, ValidationError
from .seeding import derive_seed
from .stability import DIRECTIONS

logger = logging.getLogger(__name__)

MODES = ("tuna", "traditional", "naive_distributed", "extended_traditional")


@dataclass(frozen=True)
class ObjectiveSpec:
    direction: str = "maximize"
    name: str = "performance"

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValidationError(f"Unknown objective direction {self.direction!r}")


@dataclass(frozen=True)
class Suggestion:
    config: Configuration
    budget: int
    is_initialization: bool = False


# ============= SUCCESSIVE HALVING =============

class SuccessiveHalving:
    """Single-bracket rung bookkeeping; budget = number of distinct workers."""

    def __init__(self, rung_budgets: Sequence[int] = RUNG_BUDGETS, eta: int = PROMOTION_ETA):
        budgets = tuple(int(b) for b in rung_budgets)
        if not budgets or budgets[0] < 1 or any(b <= a for a, b in zip(budgets, budgets[1:])):
            raise ValidationError(f"Rung budgets must be positive and strictly increasing, got {budgets}")
        if eta < 2:
            raise ValidationError(f"eta must be >= 2, got {eta}")
        self.rung_budgets = budgets
        self.eta = eta
        self.completed: List[Dict[int, float]] = [{} for _ in budgets]
        self.promoted: List[Set[int]] = [set() for _ in budgets]

    @property
    def max_budget(self) -> int:
        return self.rung_budgets[-1]

    def rung_of(self, budget: int) -> int:
        try:
            return self.rung_budgets.index(budget)
        except ValueError:
            raise ProtocolError(f"Budget {budget} is not a rung budget {self.rung_budgets}")

    def record(self, config_id: int, budget: int, score: float):
        rung = self.rung_of(budget)
        if rung > 0 and config_id not in self.completed[rung - 1]:
            raise ProtocolError(f"Config {config_id} reached budget {budget} without completing the rung below")
        self.completed[rung][config_id] = score

    def quota(self, rung: int) -> int:
        return len(self.completed[rung]) // self.eta

    def next_promotion(self, direction: str) -> Optional[Tuple[int, int]]:
        """(config_id, next budget) of the best unpromoted top-1/eta config, highest rung first."""
        sign = -1.0 if direction == "maximize" else 1.0
        for rung in range(len(self.rung_budgets) - 2, -1, -1):
            quota = self.quota(rung)
            if quota == 0 or len(self.promoted[rung]) >= quota:
                continue
            ranked = sorted(self.completed[rung].items(), key=lambda kv: (sign * kv[1], kv[0]))
            for config_id, _ in ranked[:quota]:
                if config_id not in self.promoted[rung]:
                    self.promoted[rung].add(config_id)
                    return config_id, self.rung_budgets[rung + 1]
        return None


# ============= ACQUISITION =============

def expected_improvement(mean, stddev, best: float, direction: str = "maximize"):
    """
    EI = sigma * (z * Phi(z) + phi(z)), z = improvement / sigma.

    Improvement is mean - best when maximizing and best - mean when minimizing.
    sigma = 0 gives max(0, improvement). Accepts scalars or arrays.
    """
    if direction not in DIRECTIONS:
        raise ValidationError(f"Unknown objective direction {direction!r}")
    mean = np.asarray(mean, dtype=float)
    stddev = np.asarray(stddev, dtype=float)
    improvement = mean - best if direction == "maximize" else best - mean
    positive = stddev > 0
    safe = np.where(positive, stddev, 1.0)
    z = improvement / safe
    ei = np.where(positive, improvement * norm.cdf(z) + safe * norm.pdf(z), np.maximum(improvement, 0.0))
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


# ============= OPTIMIZERS =============

class BaseOptimizer:
    """Ask/tell loop shared by all optimizers."""

    name = "base"

    def __init__(self, space: ConfigSpace, objective: ObjectiveSpec, seed: int = 0,
                 rung_budgets: Sequence[int] = RUNG_BUDGETS, eta: int = PROMOTION_ETA,
                 init_configs: int = INIT_CONFIGS):
        """
        Initialize the optimizer.

        Args:
            space: configuration space
            objective: direction and name of the objective
            seed: run seed; sub-seeds derived per component
            rung_budgets: ascending worker-count budgets
            eta: promotion ratio
            init_configs: size of the initialization set (default + random)
        """
        self.space = space
        self.objective = objective
        self.seed = seed
        self.rungs = SuccessiveHalving(rung_budgets, eta)
        self.finished = False

        self._configs: Dict[int, Configuration] = {}
        self._pending: Dict[Tuple[int, int], Suggestion] = {}
        self._told: Set[Tuple[int, int]] = set()
        self.observations: List[Tuple[Configuration, int, float]] = []

        self._init_queue: List[Configuration] = []
        if init_configs >= 1:
            self._init_queue.append(default_config(space))
        if init_configs > 1:
            for config in sample_random(space, derive_seed(seed, "init"), init_configs - 1):
                if config.config_id not in {c.config_id for c in self._init_queue}:
                    self._init_queue.append(config)

    @property
    def max_budget(self) -> int:
        return self.rungs.max_budget

    @property
    def seen_ids(self) -> Set[int]:
        return set(self._configs) | {c.config_id for c in self._init_queue}

    def ask(self) -> Suggestion:
        if self.finished:
            raise StateError("Optimizer has finished; no more suggestions")

        if self._init_queue:
            config = self._init_queue.pop(0)
            suggestion = Suggestion(config, self.rungs.rung_budgets[0], is_initialization=True)
        else:
            promotion = self.rungs.next_promotion(self.objective.direction)
            if promotion is not None:
                config_id, budget = promotion
                suggestion = Suggestion(self._configs[config_id], budget)
                logger.debug(f"  Promoting config {config_id} to budget {budget}")
            else:
                suggestion = Suggestion(self._propose(), self.rungs.rung_budgets[0])

        key = (suggestion.config.config_id, suggestion.budget)
        if key in self._pending or key in self._told:
            raise ProtocolError(f"Config {key[0]} already suggested at budget {key[1]}")
        self._configs[suggestion.config.config_id] = suggestion.config
        self._pending[key] = suggestion
        return suggestion

    def tell(self, config: Configuration, budget: int, score: float):
        key = (config.config_id, budget)
        if key in self._told:
            raise ProtocolError(f"Config {config.config_id} already told at budget {budget}")
        if key not in self._pending:
            raise ProtocolError(f"Config {config.config_id} was never asked at budget {budget}")
        if score is None or not math.isfinite(score):
            raise ValidationError(f"Score must be finite, got {score}")
        del self._pending[key]
        self._told.add(key)
        self.rungs.record(config.config_id, budget, score)
        self.observations.append((config, budget, float(score)))
        self._on_tell()

    def discard(self, config: Configuration, budget: int):
        """Drop a pending suggestion that produced no usable score."""
        key = (config.config_id, budget)
        if key not in self._pending:
            raise ProtocolError(f"Config {config.config_id} is not pending at budget {budget}")
        del self._pending[key]
        self._told.add(key)

    def finish(self):
        self.finished = True

    @property
    def pending_count(self) -> int:
        return len(self._pending)

    def _on_tell(self):
        pass

    def _propose(self) -> Configuration:
        raise NotImplementedError("Subclasses must implement _propose()")

    def _random_unseen(self, stream: str) -> Configuration:
        seen = self.seen_ids
        for attempt in range(1000):
            config = sample_random(self.space, derive_seed(self.seed, stream, len(self._configs), attempt), 1)[0]
            if config.config_id not in seen:
                return config
        raise StateError("Could not find an unseen configuration")

    def get_info(self) -> Dict[str, object]:
        return {
            "optimizer": self.name,
            "direction": self.objective.direction,
            "rung_budgets": list(self.rungs.rung_budgets),
            "eta": self.rungs.eta,
            "observations": len(self.observations),
        }


class RandomSearchOptimizer(BaseOptimizer):
    name = "random"

    def _propose(self) -> Configuration:
        return self._random_unseen("random")


class ForestBOOptimizer(BaseOptimizer):
    """Forest surrogate over (encoded config ++ budget / max_budget), EI over random candidates."""

    name = "forest-bo"

    def __init__(self, space: ConfigSpace, objective: ObjectiveSpec, seed: int = 0,
                 rung_budgets: Sequence[int] = RUNG_BUDGETS, eta: int = PROMOTION_ETA,
                 init_configs: int = INIT_CONFIGS, candidates: int = EI_CANDIDATES,
                 tree_count: int = SURROGATE_TREES):
        super().__init__(space, objective, seed, rung_budgets, eta, init_configs)
        self.candidates = candidates
        self.params = forest.ForestParams(tree_count=tree_count, min_leaf=FOREST_MIN_LEAF)
        self.surrogate: Optional[forest.ForestModel] = None
        self._dirty = False
        self._rng = np.random.default_rng(derive_seed(seed, "candidates"))

    def _on_tell(self):
        self._dirty = True

    def features(self, config: Configuration, budget: int) -> np.ndarray:
        return np.append(encode(self.space, config), budget / self.max_budget)

    def refit(self):
        """Refit the surrogate on every completed (config, budget)."""
        X = np.vstack([self.features(c, b) for c, b, _ in self.observations])
        y = np.array([s for _, _, s in self.observations])
        self.surrogate = forest.fit(X, y, params=self.params, seed=derive_seed(self.seed, "surrogate"))
        self._dirty = False

    def _propose(self) -> Configuration:
        if not self.observations:
            return self._random_unseen("random")
        if self._dirty or self.surrogate is None:
            self.refit()

        # Predict at the highest budget observed so far
        budget = max(b for _, b, _ in self.observations)
        scores = [s for _, b, s in self.observations if b == budget]
        best = max(scores) if self.objective.direction == "maximize" else min(scores)

        encoded = sample_encoded(self.space, self._rng, self.candidates)
        X = np.hstack([encoded, np.full((len(encoded), 1), budget / self.max_budget)])
        per_tree = self.surrogate.per_tree(X)
        ei = expected_improvement(per_tree.mean(axis=0), per_tree.std(axis=0), best, self.objective.direction)

        seen = self.seen_ids
        for index in np.argsort(-ei, kind="stable"):
            config = decode(self.space, encoded[index])
            if config.config_id not in seen:
                return config
        return self._random_unseen("random")


def make_optimizer(name: str, space: ConfigSpace, objective: ObjectiveSpec, seed: int,
                   rung_budgets: Sequence[int], **kwargs) -> BaseOptimizer:
    if name == "forest-bo":
        return ForestBOOptimizer(space, objective, seed, rung_budgets, **kwargs)
    if name == "random":
        kwargs.pop("candidates", None)
        kwargs.pop("tree_count", None)
        return RandomSearchOptimizer(space, objective, seed, rung_budgets, **kwargs)
    raise ValidationError(f"Unknown optimizer {name!r}")


# ============= SAMPLING MODES =============

@dataclass(frozen=True)
class SchedulingPolicy:
    mode: str
    rung_budgets: Tuple[int, ...]
    pool_size: int
    detector_enabled: bool
    model_enabled: bool
    aggregation: str = "worst_case"
    trial_target: Optional[int] = None

    @property
    def max_budget(self) -> int:
        return self.rung_budgets[-1]


def tuna_rungs(pool_size: int, rung_budgets: Sequence[int] = RUNG_BUDGETS) -> Tuple[int, ...]:
    """Rung budgets below the pool size, ending at the full pool."""
    return tuple(b for b in rung_budgets if b < pool_size) + (pool_size,)


def run_mode(mode: str, pool_size: int = POOL_SIZE, rung_budgets: Sequence[int] = RUNG_BUDGETS,
             reference_trials: Optional[int] = None) -> SchedulingPolicy:
    """
    Scheduling policy of a sampling methodology.

    traditional           one pinned worker, budget 1, no detector, no model
    extended_traditional  traditional with the trial count of a reference tuna run
    naive_distributed     every config on the whole pool, worst-case aggregation
    tuna                  successive halving, detector and noise model
    """
    if mode not in MODES:
        raise ValidationError(f"Unknown mode {mode!r}, expected one of {MODES}")
    if pool_size < 1:
        raise ValidationError(f"Pool size must be >= 1, got {pool_size}")

    if mode in ("traditional", "extended_traditional"):
        return SchedulingPolicy(mode, (1,), 1, detector_enabled=False, model_enabled=False,
                                trial_target=reference_trials if mode == "extended_traditional" else None)
    if mode == "naive_distributed":
        return SchedulingPolicy(mode, (pool_size,), pool_size, detector_enabled=False, model_enabled=False)
    return SchedulingPolicy(mode, tuna_rungs(pool_size, rung_budgets), pool_size,
                            detector_enabled=True, model_enabled=True)
