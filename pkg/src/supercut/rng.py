"""Deterministic RNG derivation.

Every randomized step derives its own generator from the run seed plus a
purpose tag and the ids involved, so results never depend on iteration
order or on how many draws other steps consumed.
"""

from __future__ import annotations

import numpy as np

TAG_SCENE = 1
TAG_ORACLE = 2
TAG_FEATURE_SAMPLES = 3
TAG_GNN_INIT = 4
TAG_IMAP_NOISE = 5


def derive_rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, *[int(t) & 0xFFFFFFFF for t in tags]])
