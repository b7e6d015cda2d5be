"""Seed plumbing.

Every random draw in this package goes through numpy's PCG64 generator,
which has a published algorithm and stable streams, so golden fixtures
stay byte-identical across platforms.  Child seeds are derived with
``numpy.random.SeedSequence`` spawn keys instead of ad-hoc arithmetic.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    """A fresh PCG64 generator for the given integer seed."""
    return np.random.Generator(np.random.PCG64(seed))


def spawn_seed(master: int, *key: int) -> int:
    """Derive a child seed from a master seed and an integer key path.

    Children with different key paths are statistically independent, which
    is how training, validation, and evaluation episodes are kept on
    disjoint seed streams.
    """
    ss = np.random.SeedSequence(master, spawn_key=tuple(key))
    return int(ss.generate_state(1, np.uint64)[0])


def seed_pairs(master: int, count: int, *prefix: int) -> list[tuple[int, int]]:
    """(design_seed, fault_seed) pairs for `count` independent networks."""
    return [
        (spawn_seed(master, *prefix, i, 0), spawn_seed(master, *prefix, i, 1))
        for i in range(count)
    ]
