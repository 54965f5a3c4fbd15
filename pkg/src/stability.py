"""
Stability Detector & Aggregator

Classifies a configuration's multi-worker samples as stable or unstable by their
relative range, penalizes unstable ones, and reduces the samples to the single score
reported to the optimizer.
"""
import logging
import math
import statistics
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Sequence

from .config import DETECTION_THRESHOLD
from .errors import DegenerateInputError, DomainError, ValidationError

logger = logging.getLogger(__name__)

DIRECTIONS = ("maximize", "minimize")
AGGREGATION_KINDS = ("worst_case", "mean", "median")
DEFAULT_PENALTY = {"maximize": 0.5, "minimize": 2.0}


@dataclass(frozen=True)
class StabilityVerdict:
    config_id: int
    relative_range: float
    is_unstable: bool
    threshold_used: float

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "StabilityVerdict":
        return cls(int(data["config_id"]), float(data["relative_range"]),
                   bool(data["is_unstable"]), float(data["threshold_used"]))


@dataclass(frozen=True)
class AggregationPolicy:
    kind: str = "worst_case"
    direction: str = "maximize"
    penalty_factor: Optional[float] = None  # None -> 0.5 for maximize, 2.0 for minimize

    def __post_init__(self):
        if self.kind not in AGGREGATION_KINDS:
            raise ValidationError(f"Unknown aggregation kind {self.kind!r}")
        _check_direction(self.direction)
        factor = DEFAULT_PENALTY[self.direction] if self.penalty_factor is None else float(self.penalty_factor)
        # Penalty must always move the score in the adverse direction
        adverse = 0 < factor < 1 if self.direction == "maximize" else factor > 1
        if not adverse:
            raise ValidationError(f"Penalty factor {factor} is not adverse for {self.direction}")
        object.__setattr__(self, "penalty_factor", factor)


def _check_direction(direction: str):
    if direction not in DIRECTIONS:
        raise ValidationError(f"Unknown objective direction {direction!r}")


def _check_samples(samples: Sequence[float]) -> List[float]:
    values = [float(s) for s in samples]
    if not values:
        raise DomainError("No samples given")
    if not all(math.isfinite(v) for v in values):
        raise DomainError(f"Samples must be finite, got {values}")
    if any(v < 0 for v in values):
        raise DomainError("Relative range is undefined for negative-valued objectives")
    return values


# ============= OPERATIONS =============

def relative_range(samples: Sequence[float]) -> float:
    """(max - min) / mean of the samples."""
    values = _check_samples(samples)
    mean = statistics.fmean(values)
    largest = max(abs(v) for v in values)
    if largest == 0 or abs(mean) < 1e-12 * largest:
        raise DegenerateInputError(f"Mean of {values} is too close to zero")
    return (max(values) - min(values)) / mean


def classify(samples: Sequence[float], threshold: float = DETECTION_THRESHOLD,
             config_id: int = 0) -> StabilityVerdict:
    """Unstable iff the relative range strictly exceeds the threshold."""
    if not threshold > 0:
        raise DomainError(f"Threshold must be positive, got {threshold}")
    rr = relative_range(samples)
    return StabilityVerdict(config_id=config_id, relative_range=rr,
                            is_unstable=rr > threshold, threshold_used=threshold)


def apply_penalty(score: float, direction: str, factor: Optional[float] = None) -> float:
    """Halve (maximize) or double (minimize) a score."""
    _check_direction(direction)
    factor = DEFAULT_PENALTY[direction] if factor is None else factor
    return score * factor


def aggregate(samples: Sequence[float], verdict: StabilityVerdict, policy: AggregationPolicy) -> float:
    """Reduce samples to one score; unstable verdicts are penalized after reduction."""
    values = [float(s) for s in samples]
    if not values:
        raise DomainError("Cannot aggregate an empty sample set")

    if policy.kind == "worst_case":
        score = min(values) if policy.direction == "maximize" else max(values)
    elif policy.kind == "mean":
        score = statistics.fmean(values)
    else:
        score = statistics.median(values)

    if verdict.is_unstable:
        score = apply_penalty(score, policy.direction, policy.penalty_factor)
    return score


def substitute_crashes(samples: Sequence[Optional[float]], crash_value: Optional[float]) -> List[float]:
    """Replace failed samples (None) with the crash penalty value; drop them if there is none."""
    if crash_value is None:
        return [s for s in samples if s is not None]
    return [crash_value if s is None else s for s in samples]


def crash_penalty_value(reference: Sequence[float], direction: str) -> Optional[float]:
    """Worst observed reference performance (the default config's, when it has run)."""
    _check_direction(direction)
    values = [v for v in reference if v is not None and math.isfinite(v)]
    if not values:
        return None
    return min(values) if direction == "maximize" else max(values)


class StabilityAggregator:
    """Detector + aggregation policy for one run."""

    def __init__(self, policy: AggregationPolicy, threshold: float = DETECTION_THRESHOLD,
                 detector_enabled: bool = True):
        """
        Initialize the aggregator.

        Args:
            policy: aggregation policy (kind, direction, penalty)
            threshold: relative-range threshold, strict inequality
            detector_enabled: False skips classification (every config treated as stable)
        """
        self.policy = policy
        self.threshold = threshold
        self.detector_enabled = detector_enabled

    def detect(self, config_id: int, samples: Sequence[float]) -> StabilityVerdict:
        if not self.detector_enabled:
            try:
                rr = relative_range(samples)
            except DomainError:
                rr = 0.0
            return StabilityVerdict(config_id, rr, False, math.inf)
        try:
            return classify(samples, self.threshold, config_id)
        except DegenerateInputError:
            logger.warning(f"  ⚠️ Config {config_id}: degenerate samples {list(samples)}, flagged unstable")
            return StabilityVerdict(config_id, math.inf, True, self.threshold)

    def aggregate(self, samples: Sequence[float], verdict: StabilityVerdict) -> float:
        return aggregate(samples, verdict, self.policy)

    def get_info(self) -> Dict[str, Any]:
        return {
            "kind": self.policy.kind,
            "direction": self.policy.direction,
            "penalty_factor": self.policy.penalty_factor,
            "threshold": self.threshold,
            "detector_enabled": self.detector_enabled,
        }
