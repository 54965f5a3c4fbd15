"""
Noise Adjuster

Learns each sample's relative error from system metrics and worker identity, then
de-noises new samples before aggregation.

Training (full refit every call):
    X = metrics ++ one-hot(worker)
    y = performance / mean(performance of the same config) - 1
Inference:
    adjusted = performance / (s + 1), s = predicted relative error
"""
import logging
import math
import threading
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import forest
from .config import FOREST_MIN_LEAF, MODEL_MIN_CONFIGS, MODEL_MIN_ROWS, NOISE_MODEL_TREES
from .errors import AdjustmentOverflowError, DomainError
from .seeding import derive_seed

logger = logging.getLogger(__name__)

GUARDRAIL_BOUND = 0.5

TrainingRow = Tuple[Mapping[str, float], int, float, int]


def relative_error_targets(rows: Iterable[TrainingRow]) -> Tuple[List[TrainingRow], List[float]]:
    """
    Training targets: each row's performance relative to its own config's mean, minus 1.

    Rows come out ordered by (config_id, worker_id); configs with a single row or a zero
    mean are dropped.
    """
    by_config: Dict[int, List[TrainingRow]] = {}
    for row in rows:
        by_config.setdefault(row[3], []).append(row)

    usable: List[TrainingRow] = []
    targets: List[float] = []
    for config_id in sorted(by_config):
        group = sorted(by_config[config_id], key=lambda r: r[1])
        if len(group) < 2:
            continue
        mean = float(np.mean([r[2] for r in group]))
        if mean == 0:
            continue
        for row in group:
            usable.append(row)
            targets.append(row[2] / mean - 1.0)
    return usable, targets


class NoiseModel:
    """Standardizer + forest over (metrics, worker one-hot); identity while cold."""

    def __init__(self, worker_vocabulary: Sequence[int], seed: int = 0,
                 tree_count: int = NOISE_MODEL_TREES, min_leaf: int = FOREST_MIN_LEAF,
                 min_configs: int = MODEL_MIN_CONFIGS, min_rows: int = MODEL_MIN_ROWS,
                 guardrail: bool = False, max_workers: int = 1):
        """
        Initialize a cold noise model.

        Args:
            worker_vocabulary: worker ids defining the one-hot block, in order
            seed: run seed; the forest seed is derived from it
            tree_count: trees in the forest
            min_leaf: minimum rows per leaf
            min_configs: distinct configs needed before the model activates
            min_rows: training rows needed before the model activates
            guardrail: clamp predicted relative error to [-0.5, 0.5]
            max_workers: threads used to fit trees
        """
        self.worker_vocabulary = list(worker_vocabulary)
        self._worker_index = {w: i for i, w in enumerate(self.worker_vocabulary)}
        self.metric_vocabulary: Optional[List[str]] = None
        self.seed = seed
        self.params = forest.ForestParams(tree_count=tree_count, min_leaf=min_leaf)
        self.min_configs = min_configs
        self.min_rows = min_rows
        self.guardrail = guardrail
        self.max_workers = max_workers
        self.trained_row_count = 0
        self.fit_count = 0
        self._ignored_metrics = set()
        # (standardizer, forest) swapped as a single reference
        self._fitted: Optional[Tuple[forest.Standardizer, forest.ForestModel]] = None
        self._lock = threading.Lock()

    @property
    def is_cold(self) -> bool:
        return self._fitted is None

    @property
    def feature_width(self) -> int:
        return len(self.metric_vocabulary or []) + len(self.worker_vocabulary)

    def observe_metrics(self, metrics: Mapping[str, float]):
        """Freeze the metric vocabulary at the first observed trial."""
        if self.metric_vocabulary is None:
            self.metric_vocabulary = sorted(metrics)
            logger.debug(f"  Metric vocabulary frozen at {len(self.metric_vocabulary)} metrics")
            return
        for name in metrics:
            if name not in self.metric_vocabulary and name not in self._ignored_metrics:
                self._ignored_metrics.add(name)
                logger.warning(f"  ⚠️ Metric {name!r} appeared after the vocabulary was frozen, ignored")

    def features(self, metrics: Mapping[str, float], worker_id: int) -> np.ndarray:
        """Metric values (NaN where missing) followed by the worker one-hot block."""
        vocabulary = self.metric_vocabulary or []
        row = np.zeros(len(vocabulary) + len(self.worker_vocabulary))
        for i, name in enumerate(vocabulary):
            row[i] = metrics.get(name, np.nan)
        # Unseen workers keep an all-zero block
        index = self._worker_index.get(worker_id)
        if index is not None:
            row[len(vocabulary) + index] = 1.0
        return row

    # ============= TRAINING =============

    def train(self, rows: Iterable[TrainingRow]) -> "NoiseModel":
        """Refit from scratch on max-budget stable rows; stays cold below the activation minimum."""
        usable, targets = relative_error_targets(rows)
        n_configs = len({r[3] for r in usable})
        if n_configs < self.min_configs or len(usable) < self.min_rows:
            logger.debug(f"  Noise model cold: {len(usable)} rows from {n_configs} configs")
            with self._lock:
                self._fitted = None
                self.trained_row_count = 0
            return self

        for row in usable:
            self.observe_metrics(row[0])
        X = np.vstack([self.features(r[0], r[1]) for r in usable])
        # Missing metrics take the column mean, which standardizes to 0
        missing = np.isnan(X)
        if missing.any():
            counts = (~missing).sum(axis=0)
            sums = np.where(missing, 0.0, X).sum(axis=0)
            means = np.divide(sums, counts, out=np.zeros(X.shape[1]), where=counts > 0)
            X = np.where(missing, means, X)

        standardizer = forest.Standardizer.fit(X)
        model = forest.fit(
            standardizer.transform(X), np.asarray(targets),
            params=self.params,
            seed=derive_seed(self.seed, "noise_model"),
            max_workers=self.max_workers,
        )
        with self._lock:
            self._fitted = (standardizer, model)
            self.trained_row_count = len(usable)
            self.fit_count += 1
        logger.info(f"  🔄 Noise model refit #{self.fit_count} on {len(usable)} rows from {n_configs} configs")
        return self

    # ============= INFERENCE =============

    def predict_error(self, metrics: Mapping[str, float], worker_id: int) -> float:
        """Predicted relative error s; 0 while cold."""
        fitted = self._fitted
        if fitted is None:
            return 0.0
        standardizer, model = fitted
        z = standardizer.transform(self.features(metrics, worker_id))
        z = np.where(np.isnan(z), 0.0, z)
        s = model.predict(z)
        if self.guardrail:
            s = min(max(s, -GUARDRAIL_BOUND), GUARDRAIL_BOUND)
        return s

    def adjust(self, metrics: Mapping[str, float], worker_id: int, performance: float,
               is_unstable: bool) -> float:
        """performance / (s + 1); unstable samples and a cold model pass through unchanged."""
        if performance is None or not math.isfinite(performance):
            raise DomainError(f"Cannot adjust non-finite performance {performance}")
        if is_unstable or self.is_cold:
            return performance
        s = self.predict_error(metrics, worker_id)
        if s <= -1.0:
            raise AdjustmentOverflowError(f"Predicted relative error {s:.4f} would flip or blow up the sample")
        return performance / (s + 1.0)

    def get_info(self) -> Dict[str, object]:
        return {
            "cold": self.is_cold,
            "trained_rows": self.trained_row_count,
            "fits": self.fit_count,
            "metrics": len(self.metric_vocabulary or []),
            "workers": len(self.worker_vocabulary),
            "guardrail": self.guardrail,
        }


def train(rows: Iterable[TrainingRow], worker_vocabulary: Sequence[int], seed: int = 0, **kwargs) -> NoiseModel:
    return NoiseModel(worker_vocabulary, seed=seed, **kwargs).train(rows)


def adjust(model: NoiseModel, metrics: Mapping[str, float], worker_id: int, performance: float,
           is_unstable: bool) -> float:
    return model.adjust(metrics, worker_id, performance, is_unstable)
