"""Deterministic seed derivation.

Every stochastic component draws from a Generator seeded by a digest of
its own coordinates (run seed, scene id, frame index, purpose tag), never
from shared sequential state.  Results are therefore identical however
work is split across processes.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    text = ":".join(str(p) for p in parts)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def derive_rng(*parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))
