"""Deterministic random substream derivation.

Every stochastic step in the toolkit draws from a generator derived from
(master seed, name chain) through SHA-256, so any part of a run can be
recomputed in isolation and thread scheduling can never reorder draws.
"""

from __future__ import annotations

import hashlib

import numpy as np

# Unit separator byte; cannot appear in str() of the names we use, so
# ("ab", "c") and ("a", "bc") hash differently.
_SEP = b"\x1f"


def derive_seed(master_seed: int, *names: object) -> int:
    """Derive a 128-bit child seed from a master seed and a chain of names."""
    h = hashlib.sha256()
    h.update(str(int(master_seed)).encode("ascii"))
    for name in names:
        h.update(_SEP)
        h.update(str(name).encode("utf-8"))
    return int.from_bytes(h.digest()[:16], "big")


def substream(master_seed: int, *names: object) -> np.random.Generator:
    """Independent generator for the substream named by ``names``."""
    return np.random.default_rng(derive_seed(master_seed, *names))
