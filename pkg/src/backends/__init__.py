"""
Trial Backends

Executors that run one configuration on one worker and return a TrialRecord.
"""

from .base_backend import BaseBackend
from .simulated_backend import SimulatedBackend
from .command_backend import CommandBackend

__all__ = [
    'BaseBackend',
    'SimulatedBackend',
    'CommandBackend',
]
