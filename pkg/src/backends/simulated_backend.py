"""
Simulated Backend

Runs trials against a simulated worker. Deterministic given
(run seed, worker id, config id, sample ordinal).
"""
from typing import Dict

from ..catalog import TrialRecord
from ..config import SIM_TRIAL_SECONDS
from ..configspace import Configuration
from ..seeding import derive_seed
from ..simulator import LandscapeSpec, WorkerProfile, evaluate_sim
from .base_backend import BaseBackend


class SimulatedBackend(BaseBackend):
    """Simulated worker backed by a LandscapeSpec"""

    def __init__(self, landscape: LandscapeSpec, profile: WorkerProfile, run_seed: int,
                 trial_seconds: float = SIM_TRIAL_SECONDS):
        super().__init__(f"sim-worker-{profile.worker_id}")
        self.landscape = landscape
        self.profile = profile
        self.run_seed = run_seed
        self.trial_seconds = trial_seconds

    def trial_seed(self, config: Configuration, worker_id: int, ordinal: int) -> int:
        return derive_seed(self.run_seed, "trial", worker_id, config.config_id, ordinal)

    def evaluate(self, config: Configuration, worker_id: int, budget: int, ordinal: int) -> TrialRecord:
        outcome = evaluate_sim(self.profile, self.landscape, config, self.trial_seed(config, worker_id, ordinal))
        return self._record(config, worker_id, budget, outcome.performance, outcome.metrics,
                            self.trial_seconds, outcome.status)

    def get_info(self) -> Dict[str, str]:
        info = super().get_info()
        info["baseline"] = f"{self.profile.baseline_multiplier:.4f}"
        info["sigma"] = f"{self.profile.noise_cov:.4f}"
        return info
