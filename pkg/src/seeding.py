"""
Stable seed derivation.

All randomness in a run flows from one integer seed; components get their own
sub-seeds by hashing their names together with that seed.
"""
import hashlib
import json
from typing import Any


def stable_hash(*parts: Any) -> int:
    """64-bit unsigned hash of the given parts, stable across processes."""
    content = "|".join(json.dumps(p, sort_keys=True, default=str) for p in parts)
    return int.from_bytes(hashlib.md5(content.encode()).digest()[:8], "big")


def derive_seed(seed: int, *names: Any) -> int:
    """Sub-seed for a named component of a run seeded with `seed`."""
    return stable_hash(int(seed), *names)
