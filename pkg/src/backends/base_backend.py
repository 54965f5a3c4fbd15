"""
Base backend class for trial executors.

Includes:
- TrialRecord construction for ok / crashed / timeout outcomes
- Tolerant parsing of the JSON result payload
- Payload validation (finite performance, numeric metrics)
"""
import json
import logging
import math
import re
from typing import Any, Dict, Optional

from ..catalog import TrialRecord
from ..configspace import Configuration

logger = logging.getLogger(__name__)


class BaseBackend:
    """Base class for all trial executors"""

    def __init__(self, backend_name: str):
        self.backend_name = backend_name

    def evaluate(self, config: Configuration, worker_id: int, budget: int, ordinal: int) -> TrialRecord:
        """
        Run one trial of a configuration on a worker.

        Args:
            config: configuration to evaluate
            worker_id: worker executing the trial
            budget: budget of the owning evaluation
            ordinal: index of this sample among the config's samples

        Returns:
            TrialRecord with trial_id 0 (the catalog assigns the real id)
        """
        raise NotImplementedError("Subclasses must implement evaluate()")

    def _record(self, config: Configuration, worker_id: int, budget: int,
                performance: Optional[float], metrics: Dict[str, float],
                wall_time_s: float, status: str = "ok") -> TrialRecord:
        return TrialRecord(
            trial_id=0,
            config_id=config.config_id,
            worker_id=worker_id,
            budget=budget,
            performance=performance if status == "ok" else None,
            metrics=metrics if status == "ok" else {},
            wall_time_s=wall_time_s,
            status=status,
        )

    def _parse_payload(self, output: str) -> Optional[Dict[str, Any]]:
        """
        Parse the result object from the last non-empty output line.

        Recovery chain:
        1. Direct json.loads()
        2. Extract the outermost {...} block → json.loads()
        3. Fix trailing commas → json.loads()
        """
        lines = [line.strip() for line in (output or "").splitlines() if line.strip()]
        if not lines:
            return None
        text = lines[-1]

        try:
            return json.loads(text)
        except json.JSONDecodeError:
            pass

        start, end = text.find("{"), text.rfind("}")
        if start == -1 or end <= start:
            logger.warning(f"  ⚠️ {self.backend_name}: no JSON object in {text[:200]!r}")
            return None
        candidate = text[start:end + 1]
        try:
            return json.loads(candidate)
        except json.JSONDecodeError:
            pass

        fixed = re.sub(r",\s*([}\]])", r"\1", candidate)
        try:
            return json.loads(fixed)
        except json.JSONDecodeError:
            logger.warning(f"  ⚠️ {self.backend_name}: unparseable result line {text[:200]!r}")
            return None

    def _validate_payload(self, payload: Any) -> Optional[Dict[str, Any]]:
        """Return {'performance': float, 'metrics': {name: float}} or None."""
        if not isinstance(payload, dict) or "performance" not in payload:
            return None
        performance = payload["performance"]
        if isinstance(performance, bool) or not isinstance(performance, (int, float)):
            return None
        if not math.isfinite(performance):
            return None
        metrics = {}
        for name, value in (payload.get("metrics") or {}).items():
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
                logger.debug(f"  Dropping non-numeric metric {name}={value!r}")
                continue
            metrics[str(name)] = float(value)
        return {"performance": float(performance), "metrics": metrics}

    def get_info(self) -> Dict[str, str]:
        return {
            "backend_name": self.backend_name,
            "type": self.__class__.__name__,
        }
