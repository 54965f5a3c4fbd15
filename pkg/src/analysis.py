"""
Run Analysis

Post-hoc statistics over finished runs:
- convergence curves (reported score or deployment truth) and time-to-optimal
- detection probability and the minimal cluster size for a target confidence
- CoV / relative-range summaries and deployment evaluation on fresh workers
- raw vs adjusted error against noise-free truth
- CSV / JSON emission
"""
import json
import logging
import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.special import comb

from .catalog import Catalog
from .configspace import ConfigSpace, Configuration
from .errors import DegenerateInputError, DomainError, ValidationError
from .seeding import derive_seed
from .simulator import LandscapeSpec, WorkerProfile, evaluate_sim
from .stability import DIRECTIONS, relative_range

logger = logging.getLogger(__name__)

CURVE_KINDS = ("truth", "reported")


# ============= CONVERGENCE =============

@dataclass
class ConvergenceCurve:
    """Best-so-far value per iteration; monotone in the objective direction."""
    values: List[float]
    seed: int = 0
    mode: str = "tuna"
    kind: str = "truth"
    direction: str = "maximize"

    @classmethod
    def from_scores(cls, scores: Sequence[float], direction: str = "maximize", **kwargs) -> "ConvergenceCurve":
        if direction not in DIRECTIONS:
            raise ValidationError(f"Unknown objective direction {direction!r}")
        array = np.asarray(scores, dtype=float)
        running = np.maximum.accumulate(array) if direction == "maximize" else np.minimum.accumulate(array)
        return cls(values=[float(v) for v in running], direction=direction, **kwargs)

    def __len__(self) -> int:
        return len(self.values)

    def first_hit(self, target: float) -> Optional[int]:
        """1-based iteration where the curve first meets the target, or None."""
        for i, v in enumerate(self.values, start=1):
            if (v >= target) if self.direction == "maximize" else (v <= target):
                return i
        return None

    def value_at(self, iteration: int) -> float:
        """Best-so-far at a 1-based iteration; holds the last value beyond the end."""
        if not self.values:
            raise DomainError("Empty curve")
        return self.values[min(iteration, len(self.values)) - 1]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "iteration": np.arange(1, len(self.values) + 1),
            "best_so_far": self.values,
            "seed": self.seed,
            "mode": self.mode,
            "kind": self.kind,
        })


@dataclass
class TimeToOptimal:
    ratio: float
    hit_a: Optional[int]
    hit_b: Optional[int]
    max_iteration: int

    @property
    def unbounded(self) -> bool:
        return math.isinf(self.ratio)


def time_to_optimal(curve_a: ConvergenceCurve, curve_b: ConvergenceCurve, target_fraction: float,
                    optimum: Optional[float] = None) -> TimeToOptimal:
    """
    First-hit iteration of b over first-hit iteration of a.

    The target is target_fraction * optimum when maximizing and optimum / target_fraction
    when minimizing. The optimum defaults to the best value on either curve.
    """
    if not 0 < target_fraction <= 1:
        raise DomainError(f"target_fraction must be in (0, 1], got {target_fraction}")
    direction = curve_a.direction
    if optimum is None:
        pooled = curve_a.values + curve_b.values
        optimum = max(pooled) if direction == "maximize" else min(pooled)
    target = optimum * target_fraction if direction == "maximize" else optimum / target_fraction

    hit_a, hit_b = curve_a.first_hit(target), curve_b.first_hit(target)
    max_iteration = max(len(curve_a), len(curve_b))
    if hit_a is None or hit_b is None:
        return TimeToOptimal(math.inf, hit_a, hit_b, max_iteration)
    return TimeToOptimal(hit_b / hit_a, hit_a, hit_b, max_iteration)


def mean_curve(curves: Sequence[ConvergenceCurve]) -> ConvergenceCurve:
    """Seed-averaged curve; shorter curves hold their last value."""
    if not curves:
        raise DomainError("No curves to average")
    length = max(len(c) for c in curves)
    matrix = np.array([[c.value_at(i) for i in range(1, length + 1)] for c in curves])
    first = curves[0]
    return ConvergenceCurve(values=[float(v) for v in matrix.mean(axis=0)], seed=-1, mode=first.mode,
                            kind=first.kind, direction=first.direction)


# ============= DETECTION =============

def detection_probability(n_sampled: int, pool: int, bad_workers: int) -> float:
    """
    Chance that n distinct workers drawn without replacement include at least one
    bad and at least one good worker.
    """
    if pool < 1 or not 1 <= n_sampled <= pool:
        raise DomainError(f"Need 1 <= n_sampled <= pool, got n={n_sampled}, pool={pool}")
    if not 0 <= bad_workers <= pool:
        raise DomainError(f"Need 0 <= bad_workers <= pool, got {bad_workers}")
    total = comb(pool, n_sampled, exact=True)
    single_mode = comb(bad_workers, n_sampled, exact=True) + comb(pool - bad_workers, n_sampled, exact=True)
    return 1.0 - single_mode / total


def _check_profiles(profiles: Sequence[float], n_unstable: int, confidence: Optional[float] = None):
    if not profiles:
        raise DomainError("Need at least one instability profile")
    if n_unstable < 1:
        raise DomainError(f"n_unstable_per_run must be >= 1, got {n_unstable}")
    if any(not 0 <= f <= 1 for f in profiles):
        raise DomainError(f"Bad-worker fractions must be in [0, 1], got {list(profiles)}")
    if confidence is not None and not 0 < confidence < 1:
        raise DomainError(f"confidence must be in (0, 1), got {confidence}")


def run_detection_probability(profiles: Sequence[float], n_unstable: int, pool: int,
                              method: str = "exact", replicates: int = 100_000, seed: int = 0) -> float:
    """
    Probability that every unstable config met in a run is detected on a pool of size N.

    Each worker takes the slow path of a config independently with probability equal to
    the config's bad fraction; a config's profile is drawn uniformly from `profiles`.
    Detection needs both behaviors among the N workers.
    """
    _check_profiles(profiles, n_unstable)
    fractions = np.asarray(profiles, dtype=float)
    if method == "exact":
        per_config = 1.0 - fractions ** pool - (1.0 - fractions) ** pool
        return float(per_config.mean() ** n_unstable)
    if method != "monte_carlo":
        raise ValidationError(f"Unknown method {method!r}")

    rng = np.random.default_rng(derive_seed(seed, "cluster_size", pool))
    drawn = fractions[rng.integers(0, len(fractions), size=(replicates, n_unstable))]
    bad = rng.binomial(pool, drawn)
    detected = (bad > 0) & (bad < pool)
    return float(detected.all(axis=1).mean())


def min_cluster_size(profiles: Sequence[float], n_unstable_per_run: int, confidence: float,
                     method: str = "monte_carlo", replicates: int = 100_000, seed: int = 0,
                     max_pool: int = 200) -> Optional[int]:
    """Smallest pool reaching the confidence; None when unachievable."""
    _check_profiles(profiles, n_unstable_per_run, confidence)
    if any(f in (0.0, 1.0) for f in profiles):
        logger.warning("  ⚠️ A profile with bad fraction 0 or 1 can never be detected")
        return None
    for pool in range(2, max_pool + 1):
        if run_detection_probability(profiles, n_unstable_per_run, pool, method, replicates, seed) >= confidence:
            return pool
    return None


def detection_table(profiles: Sequence[float], n_unstable: int, max_pool: int,
                    method: str = "exact", replicates: int = 100_000, seed: int = 0) -> pd.DataFrame:
    rows = [{"pool": n, "probability": run_detection_probability(profiles, n_unstable, n, method, replicates, seed)}
            for n in range(2, max_pool + 1)]
    return pd.DataFrame(rows)


# ============= DISPERSION =============

def cov(samples: Sequence[float]) -> float:
    """Population stddev over mean."""
    values = np.asarray(samples, dtype=float)
    if values.size == 0:
        raise DomainError("No samples given")
    mean = values.mean()
    if abs(mean) < 1e-12 * max(np.abs(values).max(), 1e-300):
        raise DegenerateInputError(f"Mean of {values.tolist()} is too close to zero")
    return float(values.std() / mean)


def summarize(samples: Sequence[float]) -> Dict[str, float]:
    values = np.asarray(samples, dtype=float)
    if values.size == 0:
        raise DomainError("No samples given")
    return {
        "count": int(values.size),
        "mean": float(values.mean()),
        "stddev": float(values.std()),
        "cov": cov(values),
        "relative_range": relative_range(values.tolist()),
        "min": float(values.min()),
        "max": float(values.max()),
    }


# ============= DEPLOYMENT =============

@dataclass
class DeploymentReport:
    config_id: int
    worker_ids: List[int]
    performances: List[Optional[float]]
    mean: float = float("nan")
    stddev: float = float("nan")
    cov: float = float("nan")
    relative_range: float = float("nan")
    crashed: int = 0

    @classmethod
    def from_samples(cls, config_id: int, worker_ids: List[int],
                     performances: List[Optional[float]]) -> "DeploymentReport":
        report = cls(config_id, worker_ids, performances)
        ok = [p for p in performances if p is not None]
        report.crashed = len(performances) - len(ok)
        if ok:
            stats = summarize(ok)
            report.mean, report.stddev = stats["mean"], stats["stddev"]
            report.cov, report.relative_range = stats["cov"], stats["relative_range"]
        return report

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "config_id": self.config_id,
            "worker": self.worker_ids,
            "performance": self.performances,
        })

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def deployment_eval(config: Configuration, landscape: LandscapeSpec, fresh_workers: Sequence[WorkerProfile],
                    replicates: int = 1, seed: int = 0) -> DeploymentReport:
    """Run a config on workers never used in tuning."""
    if replicates < 1:
        raise DomainError(f"replicates must be >= 1, got {replicates}")
    worker_ids, performances = [], []
    for profile in fresh_workers:
        for replicate in range(replicates):
            trial_seed = derive_seed(seed, "deploy", profile.worker_id, config.config_id, replicate)
            outcome = evaluate_sim(profile, landscape, config, trial_seed)
            worker_ids.append(profile.worker_id)
            performances.append(outcome.performance)
    return DeploymentReport.from_samples(config.config_id, worker_ids, performances)


def deployment_truth(config: Configuration, landscape: LandscapeSpec,
                     fresh_workers: Sequence[WorkerProfile]) -> float:
    """Noise-free worst case over the fresh workers; a crashing config is worth 0 (or inf)."""
    values = [landscape.noise_free(profile, config) for profile in fresh_workers]
    worst_possible = 0.0 if landscape.direction == "maximize" else math.inf
    if not values or any(v is None for v in values):
        return worst_possible
    return min(values) if landscape.direction == "maximize" else max(values)


def _config_of(catalog: Catalog, space: ConfigSpace, config_id: int) -> Configuration:
    values = catalog.config_values(config_id)
    if values is None:
        raise ValidationError(f"Catalog has no values for config {config_id}")
    return space.make_config(values)


def convergence_curves(catalog: Catalog, space: ConfigSpace, landscape: Optional[LandscapeSpec],
                       fresh_workers: Sequence[WorkerProfile], direction: str = "maximize",
                       seed: int = 0, mode: str = "tuna") -> Dict[str, ConvergenceCurve]:
    """Per-evaluation best-so-far reported score, plus deployment truth when a landscape is known."""
    evaluations = [e for e in catalog.evaluations() if e.score is not None]
    curves = {"reported": ConvergenceCurve.from_scores(
        [e.score for e in evaluations], direction, seed=seed, mode=mode, kind="reported")}
    if landscape is not None:
        cache: Dict[int, float] = {}
        truths = []
        for e in evaluations:
            if e.config_id not in cache:
                cache[e.config_id] = deployment_truth(_config_of(catalog, space, e.config_id), landscape, fresh_workers)
            truths.append(cache[e.config_id])
        curves["truth"] = ConvergenceCurve.from_scores(truths, direction, seed=seed, mode=mode, kind="truth")
    return curves


def adjustment_error(catalog: Catalog, space: ConfigSpace, landscape: LandscapeSpec,
                     trailing_fraction: float = 0.5) -> Dict[str, float]:
    """
    Mean absolute relative error against the config's noise-free performance over the
    trailing part of a run, for raw samples, adjusted samples and reported scores.
    Unstable evaluations are skipped.
    """
    if not 0 < trailing_fraction <= 1:
        raise DomainError(f"trailing_fraction must be in (0, 1], got {trailing_fraction}")
    evaluations = catalog.evaluations()
    start = int(len(evaluations) * (1 - trailing_fraction))
    raw_errors, adjusted_errors, score_errors = [], [], []
    for e in evaluations[start:]:
        if e.stability.is_unstable or e.score is None:
            continue
        truth = landscape.base_performance(_config_of(catalog, space, e.config_id))
        for raw, adjusted in zip(e.raw, e.adjusted):
            if raw is None or adjusted is None:
                continue
            raw_errors.append(abs(raw - truth) / truth)
            adjusted_errors.append(abs(adjusted - truth) / truth)
        score_errors.append(abs(e.score - truth) / truth)

    def mean_or_nan(values: List[float]) -> float:
        return float(np.mean(values)) if values else float("nan")

    return {
        "raw_error": mean_or_nan(raw_errors),
        "adjusted_error": mean_or_nan(adjusted_errors),
        "score_error": mean_or_nan(score_errors),
        "samples": len(raw_errors),
        "evaluations": len(score_errors),
    }


# ============= OUTPUT =============

def write_curves_csv(curves: Iterable[ConvergenceCurve], path: str):
    frames = [c.to_frame() for c in curves]
    frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(
        columns=["iteration", "best_so_far", "seed", "mode", "kind"])
    frame.to_csv(path, index=False)


def write_deploy_csv(reports: Iterable[DeploymentReport], path: str):
    frames = [r.to_frame() for r in reports]
    frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(
        columns=["config_id", "worker", "performance"])
    frame.to_csv(path, index=False)


def write_summary(summary: Mapping[str, Any], path: str):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(dict(summary), f, indent=2, sort_keys=True, default=str)
