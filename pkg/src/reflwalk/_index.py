"""Flat indexing of wedge states ``(i, j)``, ``i <= j``, ordered by rank then by ``i``."""

from __future__ import annotations

import numpy as np


def rank_offset(n: int) -> int:
    """Number of wedge states with rank strictly below ``n``."""
    t, odd = divmod(n, 2)
    return (t + 1) ** 2 if odd else t * (t + 1)


def n_states(rank_max: int) -> int:
    return rank_offset(rank_max + 1)


def wedge_index(i: int, j: int) -> int:
    return rank_offset(i + j) + i


def rank_size(n: int) -> int:
    return 1 + n // 2


def wedge_states(rank_max: int) -> np.ndarray:
    """All states up to ``rank_max`` as an ``(n_states, 2)`` int array, axis first in each rank."""
    ranks = np.arange(rank_max + 1, dtype=np.int64)
    sizes = ranks // 2 + 1
    n = np.repeat(ranks, sizes)
    starts = np.cumsum(sizes) - sizes
    i = np.arange(n.size, dtype=np.int64) - np.repeat(starts, sizes)
    return np.stack([i, n - i], axis=1)
