"""Seeded counter-based random streams."""
from __future__ import annotations

import os

import numpy as np

SEED_ENV = "XFEROPS_SEED"
DEFAULT_SEED = 0


def resolve_seed(seed=None):
    """Seed to use: an explicit seed, else $XFEROPS_SEED, else 0."""
    if seed is not None:
        return int(seed)
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        return int(env)
    return DEFAULT_SEED


def make_rng(seed=None):
    """Philox generator for a resolved seed (a Generator passes through)."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(resolve_seed(seed)))


def substreams(seed, n):
    """n independent Philox generators derived from one seed."""
    ss = np.random.SeedSequence(resolve_seed(seed))
    return [np.random.Generator(np.random.Philox(s)) for s in ss.spawn(n)]
