"""
Command Backend

Runs a user-supplied program per trial.

Contract:
- TUNA_CONFIG_JSON holds the configuration as a JSON map, TUNA_WORKER_ID the worker id
- the last stdout line is {"performance": <number>, "metrics": {"<name>": <number>, ...}}
- exit code 0 = ok; nonzero or unparseable output = crashed; wall-clock overrun = timeout
"""
import json
import logging
import os
import shlex
import subprocess
import time
from typing import Dict, List, Optional, Union

from ..catalog import TrialRecord
from ..config import COMMAND_TIMEOUT_S
from ..configspace import Configuration
from ..errors import UsageError
from .base_backend import BaseBackend

logger = logging.getLogger(__name__)


class CommandBackend(BaseBackend):
    """External benchmark program, one process per trial"""

    def __init__(self, command: Union[str, List[str]], timeout_s: float = COMMAND_TIMEOUT_S,
                 env: Optional[Dict[str, str]] = None):
        super().__init__("command")
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.command:
            raise UsageError("Empty benchmark command")
        self.timeout_s = timeout_s
        self.env = dict(env or {})

    def evaluate(self, config: Configuration, worker_id: int, budget: int, ordinal: int) -> TrialRecord:
        env = dict(os.environ)
        env.update(self.env)
        env["TUNA_CONFIG_JSON"] = json.dumps(config.to_dict(), sort_keys=True)
        env["TUNA_WORKER_ID"] = str(worker_id)

        start = time.monotonic()
        try:
            result = subprocess.run(
                self.command,
                env=env,
                capture_output=True,
                text=True,
                timeout=self.timeout_s,
            )
        except subprocess.TimeoutExpired:
            logger.warning(f"  ⚠️ Worker {worker_id}: config {config.config_id} timed out after {self.timeout_s}s")
            return self._record(config, worker_id, budget, None, {}, time.monotonic() - start, "timeout")
        except OSError as e:
            logger.warning(f"  ⚠️ Worker {worker_id}: could not start {self.command[0]}: {e}")
            return self._record(config, worker_id, budget, None, {}, time.monotonic() - start, "crashed")
        elapsed = time.monotonic() - start

        if result.returncode != 0:
            logger.warning(f"  ⚠️ Worker {worker_id}: config {config.config_id} exited with {result.returncode}")
            if result.stderr:
                logger.debug(f"  stderr: {result.stderr.strip()[-500:]}")
            return self._record(config, worker_id, budget, None, {}, elapsed, "crashed")

        payload = self._validate_payload(self._parse_payload(result.stdout))
        if payload is None:
            logger.warning(f"  ⚠️ Worker {worker_id}: config {config.config_id} produced no valid result payload")
            return self._record(config, worker_id, budget, None, {}, elapsed, "crashed")

        return self._record(config, worker_id, budget, payload["performance"], payload["metrics"], elapsed)

    def get_info(self) -> Dict[str, str]:
        info = super().get_info()
        info["command"] = " ".join(shlex.quote(part) for part in self.command)
        info["timeout_s"] = str(self.timeout_s)
        return info
