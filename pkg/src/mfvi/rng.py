"""Reproducible random streams keyed by ``(seed, stream-id...)``."""

from __future__ import annotations

import numpy as np


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Return an independent generator for ``seed`` and an optional stream path.

    Streams are derived through :class:`numpy.random.SeedSequence` spawn keys,
    so ``make_rng(7, 3)`` is identical no matter which worker builds it.
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.PCG64(ss))


def child_rng(rng: np.random.Generator) -> np.random.Generator:
    """Spawn a child stream without advancing ``rng``'s own draws."""
    return rng.spawn(1)[0]
