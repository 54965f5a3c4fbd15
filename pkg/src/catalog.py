"""
Catalog

Append-only store of every trial and of the per-configuration state derived from
them. Backed by JSON Lines files in a run directory:

- trials.jsonl       one TrialRecord per line, as measured
- evaluations.jsonl  one line per completed (config, budget) evaluation; its adjusted
                     samples are copied onto the trials it covers, in memory and on reload
- configs.jsonl      config_id -> values, written the first time a config is seen
- run.json           run manifest (space, seed, mode, parameters)

Without a directory the catalog is purely in-memory.
"""
import json
import logging
import math
import os
import threading
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Mapping, Optional, Set, Tuple

from .errors import ExclusionViolationError, StateError, ValidationError
from .stability import DIRECTIONS, StabilityVerdict

logger = logging.getLogger(__name__)

STATUSES = ("ok", "crashed", "timeout")

TRIALS_FILE = "trials.jsonl"
EVALUATIONS_FILE = "evaluations.jsonl"
CONFIGS_FILE = "configs.jsonl"
MANIFEST_FILE = "run.json"


@dataclass
class TrialRecord:
    """One evaluation of a configuration on one worker."""
    trial_id: int
    config_id: int
    worker_id: int
    budget: int
    performance: Optional[float]
    adjusted_performance: Optional[float] = None
    metrics: Dict[str, float] = field(default_factory=dict)
    wall_time_s: float = 0.0
    status: str = "ok"

    def __post_init__(self):
        if self.performance is not None:
            self.performance = float(self.performance)
        if self.adjusted_performance is not None:
            self.adjusted_performance = float(self.adjusted_performance)
        self.metrics = {str(k): float(v) for k, v in self.metrics.items()}
        self.wall_time_s = float(self.wall_time_s)

    def validate(self):
        if self.status not in STATUSES:
            raise ValidationError(f"Unknown trial status {self.status!r}")
        if self.budget < 1:
            raise ValidationError(f"Budget must be >= 1, got {self.budget}")
        if self.status == "ok" and (self.performance is None or not math.isfinite(self.performance)):
            raise ValidationError(f"Trial with status ok needs a finite performance, got {self.performance}")
        if not all(math.isfinite(v) for v in self.metrics.values()):
            raise ValidationError("Metrics must be finite")

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TrialRecord":
        return cls(
            trial_id=int(data["trial_id"]),
            config_id=int(data["config_id"]),
            worker_id=int(data["worker_id"]),
            budget=int(data["budget"]),
            performance=data.get("performance"),
            adjusted_performance=data.get("adjusted_performance"),
            metrics=dict(data.get("metrics") or {}),
            wall_time_s=data.get("wall_time_s", 0.0),
            status=data.get("status", "ok"),
        )


@dataclass
class EvaluationRecord:
    """A completed (config, budget) evaluation and the score told to the optimizer."""
    evaluation_id: int
    config_id: int
    budget: int
    trial_ids: List[int]
    worker_ids: List[int]
    raw: List[Optional[float]]
    adjusted: List[Optional[float]]
    verdict: Dict[str, Any]
    score: Optional[float]
    trial_count: int
    model_rows: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @property
    def stability(self) -> StabilityVerdict:
        return StabilityVerdict.from_dict(self.verdict)


@dataclass
class ConfigSummary:
    config_id: int
    samples: List[int] = field(default_factory=list)
    max_budget_reached: int = 0
    verdict: Optional[StabilityVerdict] = None
    reported_score: Optional[float] = None
    budget_scores: Dict[int, float] = field(default_factory=dict)


def _read_jsonl(path: str) -> List[Dict[str, Any]]:
    """Read a JSON Lines file, skipping lines torn by an interrupted write."""
    if not os.path.exists(path):
        return []
    entries = []
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                entries.append(json.loads(line))
            except json.JSONDecodeError:
                logger.warning(f"  ⚠️ Skipping corrupted line {number} of {os.path.basename(path)}")
    return entries


def _terminate_torn_tail(path: str):
    """End an interrupted last line so the next append starts on a line of its own."""
    if not os.path.exists(path) or os.path.getsize(path) == 0:
        return
    with open(path, "rb+") as f:
        f.seek(-1, os.SEEK_END)
        if f.read(1) != b"\n":
            f.write(b"\n")


class Catalog:
    """All trial records of one run plus derived per-config summaries."""

    def __init__(self, directory: Optional[str] = None, fsync: bool = True):
        """
        Initialize the catalog.

        Args:
            directory: run directory; None keeps everything in memory
            fsync: force every append to disk before returning
        """
        self.directory = directory
        self.fsync = fsync
        self._lock = threading.Lock()
        self._records: List[TrialRecord] = []
        self._by_config: Dict[int, List[TrialRecord]] = {}
        self._by_trial: Dict[int, TrialRecord] = {}
        self._workers: Dict[int, Set[int]] = {}
        self._summaries: Dict[int, ConfigSummary] = {}
        self._evaluations: List[EvaluationRecord] = []
        self._configs: Dict[int, Dict[str, Any]] = {}
        if directory:
            os.makedirs(directory, exist_ok=True)

    # ----- persistence -----

    @classmethod
    def open(cls, directory: str, fsync: bool = True) -> "Catalog":
        """Reload a catalog from a run directory; appends continue its trial ids."""
        catalog = cls(directory, fsync=fsync)
        for filename in (CONFIGS_FILE, TRIALS_FILE, EVALUATIONS_FILE):
            _terminate_torn_tail(os.path.join(directory, filename))
        for entry in _read_jsonl(os.path.join(directory, CONFIGS_FILE)):
            catalog._configs[int(entry["config_id"])] = entry["values"]
        for entry in _read_jsonl(os.path.join(directory, TRIALS_FILE)):
            catalog._index(TrialRecord.from_dict(entry))
        for entry in _read_jsonl(os.path.join(directory, EVALUATIONS_FILE)):
            catalog._apply_evaluation(EvaluationRecord(**entry))
        logger.info(f"  📋 Loaded {len(catalog._records)} trials, {len(catalog._evaluations)} evaluations from {directory}")
        return catalog

    def _write_line(self, filename: str, line: str):
        if not self.directory:
            return
        with open(os.path.join(self.directory, filename), "a", encoding="utf-8") as f:
            f.write(line + "\n")
            f.flush()
            if self.fsync:
                os.fsync(f.fileno())

    def write_manifest(self, manifest: Mapping[str, Any]):
        if not self.directory:
            return
        with open(os.path.join(self.directory, MANIFEST_FILE), "w", encoding="utf-8") as f:
            json.dump(dict(manifest), f, indent=2, sort_keys=True)

    def read_manifest(self) -> Dict[str, Any]:
        if not self.directory:
            return {}
        path = os.path.join(self.directory, MANIFEST_FILE)
        if not os.path.exists(path):
            return {}
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)

    # ----- trials -----

    def _index(self, record: TrialRecord):
        self._records.append(record)
        self._by_trial[record.trial_id] = record
        self._by_config.setdefault(record.config_id, []).append(record)
        self._workers.setdefault(record.config_id, set()).add(record.worker_id)
        self._summaries.setdefault(record.config_id, ConfigSummary(record.config_id)).samples.append(record.trial_id)

    def append(self, record: TrialRecord) -> int:
        """Validate, assign the next trial id, persist, and index a record."""
        record.validate()
        with self._lock:
            if record.worker_id in self._workers.get(record.config_id, set()):
                raise ExclusionViolationError(
                    f"Config {record.config_id} already measured on worker {record.worker_id}")
            trial_id = self._records[-1].trial_id + 1 if self._records else 1
            stored = replace(record, trial_id=trial_id)
            self._write_line(TRIALS_FILE, stored.to_json())
            self._index(stored)
        return trial_id

    def records(self) -> List[TrialRecord]:
        with self._lock:
            return list(self._records)

    @property
    def trial_count(self) -> int:
        return len(self._records)

    def samples_for(self, config_id: int) -> List[TrialRecord]:
        with self._lock:
            return sorted(self._by_config.get(config_id, []), key=lambda r: r.trial_id)

    def workers_for(self, config_id: int) -> Set[int]:
        with self._lock:
            return set(self._workers.get(config_id, set()))

    # ----- configurations -----

    def register_config(self, config_id: int, values: Mapping[str, Any]):
        if config_id in self._configs:
            return
        self._configs[config_id] = dict(values)
        self._write_line(CONFIGS_FILE, json.dumps({"config_id": config_id, "values": dict(values)}))

    def config_values(self, config_id: int) -> Optional[Dict[str, Any]]:
        return self._configs.get(config_id)

    # ----- evaluations -----

    def _apply_evaluation(self, evaluation: EvaluationRecord):
        self._evaluations.append(evaluation)
        summary = self._summaries.setdefault(evaluation.config_id, ConfigSummary(evaluation.config_id))
        summary.max_budget_reached = max(summary.max_budget_reached, evaluation.budget)
        summary.verdict = evaluation.stability
        summary.reported_score = evaluation.score
        # Trials keep the adjusted value of the latest evaluation that covered them
        for trial_id, adjusted in zip(evaluation.trial_ids, evaluation.adjusted):
            record = self._by_trial.get(trial_id)
            if record is not None and record.status == "ok":
                record.adjusted_performance = adjusted
        if evaluation.score is not None:
            summary.budget_scores[evaluation.budget] = evaluation.score

    def record_evaluation(self, evaluation: EvaluationRecord):
        with self._lock:
            self._write_line(EVALUATIONS_FILE, evaluation.to_json())
            self._apply_evaluation(evaluation)

    def evaluations(self) -> List[EvaluationRecord]:
        with self._lock:
            return list(self._evaluations)

    def summary(self, config_id: int) -> Optional[ConfigSummary]:
        return self._summaries.get(config_id)

    # ----- queries -----

    def training_rows(self, max_budget: int) -> List[Tuple[Dict[str, float], int, float, int]]:
        """(metrics, worker_id, performance, config_id) of stable configs completed at max_budget."""
        rows = []
        with self._lock:
            for summary in self._summaries.values():
                if summary.max_budget_reached != max_budget:
                    continue
                if summary.verdict is None or summary.verdict.is_unstable:
                    continue
                for record in self._by_config.get(summary.config_id, []):
                    if record.status == "ok":
                        rows.append((record.metrics, record.worker_id, record.performance, record.config_id))
        return rows

    def best_config(self, direction: str, budget: Optional[int] = None) -> int:
        """Config with the extremal reported score; ties go to the lower config_id."""
        if direction not in DIRECTIONS:
            raise ValidationError(f"Unknown objective direction {direction!r}")
        candidates = [
            s for s in self._summaries.values()
            if s.reported_score is not None and (budget is None or s.max_budget_reached >= budget)
        ]
        if not candidates:
            raise StateError("No configuration has a reported score yet")
        sign = -1.0 if direction == "maximize" else 1.0
        best = min(candidates, key=lambda s: (sign * s.reported_score, s.config_id))
        return best.config_id
