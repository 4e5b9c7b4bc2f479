"""Seeded random generators keyed by ``(seed, purpose)``.

Every consumer of randomness asks for its own stream, so adding a draw in
one place never shifts the numbers seen elsewhere.
"""

from __future__ import annotations

import hashlib

import numpy as np


def purpose_key(purpose: str) -> int:
    return int.from_bytes(hashlib.sha256(purpose.encode()).digest()[:8], "little")


def rng_for(seed: int, purpose: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), purpose_key(purpose)]))
