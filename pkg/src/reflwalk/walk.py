"""Discrete-time reflected walk in wedge coordinates ``(I, J)``, ``I <= J``.

The walk lives on the quarter plane but is tracked through its sorted
coordinates, so a single state ``(I, J)`` stands for ``(I, J)`` and ``(J, I)``.
Moves are drawn from :func:`step_distribution`; the compiled kernel below
replays exactly the same four cases on a pre-generated stream of uniforms.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numba
import numpy as np

from reflwalk._index import wedge_states
from reflwalk.alpha import AlphaField

CHUNK = 1 << 20


class WalkState(NamedTuple):
    I: int
    J: int

    @property
    def N(self) -> int:
        return self.I + self.J

    def validate(self) -> "WalkState":
        if not 0 <= self.I <= self.J:
            raise ValueError(f"wedge states need 0 <= I <= J, got {tuple(self)}")
        return self


@dataclass(frozen=True)
class StepDistribution:
    """Probabilities of the four wedge moves from one state.

    On the diagonal only ``p_J_up`` and ``p_I_down`` are used; at the
    origin the single move to ``(0, 1)`` is booked as ``p_J_up = 1``.
    """

    p_J_up: float
    p_J_down: float
    p_I_up: float
    p_I_down: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.p_J_up, self.p_J_down, self.p_I_up, self.p_I_down)

    def total(self) -> float:
        return self.p_J_up + self.p_J_down + self.p_I_up + self.p_I_down


def step_distribution(field: AlphaField, s: WalkState | tuple[int, int]) -> StepDistribution:
    i, j = WalkState(*s).validate()
    if j == 0:
        return StepDistribution(1.0, 0.0, 0.0, 0.0)
    if i == 0:
        return StepDistribution(0.25, 0.25, 0.5, 0.0)
    if i == j:
        return StepDistribution(0.5, 0.0, 0.0, 0.5)
    shift = field.evaluate(i, j) / (i + j)
    return StepDistribution(0.25 + shift, 0.25 - shift, 0.25 - shift, 0.25 + shift)


# move codes shared with the kernel
J_UP, J_DOWN, I_UP, I_DOWN = 0, 1, 2, 3


@numba.njit(cache=True)
def _move(i, j, u, a):
    """Next state from ``(i, j)`` given a uniform ``u`` and the coefficient ``a``."""
    if j == 0:
        return 0, 1
    if i == 0:
        if u < 0.25:
            return 0, j + 1
        if u < 0.5:
            return 0, j - 1
        return 1, j
    if i == j:
        if u < 0.5:
            return i, j + 1
        return i - 1, j
    b = a / (i + j)
    if u < 0.25 + b:
        return i, j + 1
    if u < 0.5:
        return i, j - 1
    if u < 0.75 - b:
        return i + 1, j
    return i - 1, j


@numba.njit(cache=True)
def _offset(n):
    t = n // 2
    if n % 2 == 1:
        return (t + 1) * (t + 1)
    return t * (t + 1)


@numba.njit(cache=True)
def _run_path(i, j, uniforms, table, rank_cap, out_i, out_j, pos):
    """Advance along ``uniforms``, writing states to ``out_*`` from ``pos``.

    Stops early (returning the number of uniforms used) if the walk needs a
    coefficient beyond ``rank_cap``.
    """
    for k in range(uniforms.size):
        if i + j >= rank_cap:
            return k, i, j
        i, j = _move(i, j, uniforms[k], table[_offset(i + j) + i])
        out_i[pos + k] = i
        out_j[pos + k] = j
    return uniforms.size, i, j


@numba.njit(cache=True)
def _run_counts(i, j, uniforms, table, rank_cap, up, down, boundary, visits):
    """Counts-only variant: per-norm up/down moves and boundary visits."""
    n_cap = up.size
    for k in range(uniforms.size):
        n = i + j
        if n >= rank_cap:
            return k, i, j
        if n < n_cap:
            visits[n] += 1
            if i == 0:
                boundary[n] += 1
        i2, j2 = _move(i, j, uniforms[k], table[_offset(n) + i])
        if n < n_cap:
            if i2 + j2 > n:
                up[n] += 1
            else:
                down[n] += 1
        i, j = i2, j2
    return uniforms.size, i, j


class _TableCache:
    """Coefficient table in flat rank order, doubled whenever the walk outgrows it."""

    def __init__(self, field: AlphaField, rank_cap: int = 256):
        self.field = field
        self.rank_cap = 0
        self.table = np.zeros(0)
        self.grow(rank_cap)

    def grow(self, rank_cap: int) -> None:
        st = wedge_states(rank_cap)
        self.table = self.field.evaluate_many(st[:, 0], st[:, 1])
        self.rank_cap = rank_cap

    def ensure(self, rank: int) -> None:
        if rank >= self.rank_cap:
            self.grow(max(2 * self.rank_cap, rank + 1))


@dataclass
class Trajectory:
    """A recorded path; ``I[t], J[t]`` is the state after ``t`` steps."""

    seed: int
    I: np.ndarray
    J: np.ndarray
    step_count: int

    @property
    def N(self) -> np.ndarray:
        return self.I + self.J

    @property
    def states(self) -> list[WalkState]:
        return [WalkState(int(a), int(b)) for a, b in zip(self.I, self.J)]

    def to_csv(self, path: str | Path, stride: int = 1) -> None:
        if stride < 1:
            raise ValueError("stride must be >= 1")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "I", "J", "N"])
            for t in range(0, self.step_count + 1, stride):
                a, b = int(self.I[t]), int(self.J[t])
                w.writerow([t, a, b, a + b])


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def simulate(
    field: AlphaField,
    start: WalkState | tuple[int, int] = (0, 1),
    steps: int = 1000,
    seed: int = 0,
) -> Trajectory:
    """Simulate ``steps`` moves from ``start`` using a PCG64 stream seeded by ``seed``."""
    if steps < 1:
        raise ValueError("steps must be positive")
    i, j = WalkState(*start).validate()
    cache = _TableCache(field, max(64, 2 * (i + j) + 8))
    out_i = np.empty(steps + 1, dtype=np.int64)
    out_j = np.empty(steps + 1, dtype=np.int64)
    out_i[0], out_j[0] = i, j
    rng = _rng(seed)
    done = 0
    while done < steps:
        u = rng.random(min(CHUNK, steps - done))
        used = 0
        while used < u.size:
            k, i, j = _run_path(i, j, u[used:], cache.table, cache.rank_cap, out_i, out_j, done + used + 1)
            used += k
            if used < u.size:
                cache.ensure(i + j)
        done += u.size
    return Trajectory(seed, out_i, out_j, steps)


@dataclass
class NormCounts:
    """Per-norm tallies of a run: moves up/down out of norm ``n`` and visits on the axis."""

    up: np.ndarray
    down: np.ndarray
    boundary: np.ndarray
    visits: np.ndarray
    steps: int

    def merge(self, other: "NormCounts") -> "NormCounts":
        size = max(self.up.size, other.up.size)

        def pad(a):
            return np.pad(a, (0, size - a.size))

        return NormCounts(
            pad(self.up) + pad(other.up),
            pad(self.down) + pad(other.down),
            pad(self.boundary) + pad(other.boundary),
            pad(self.visits) + pad(other.visits),
            self.steps + other.steps,
        )

    def as_dict(self) -> dict[int, tuple[int, int]]:
        seen = np.flatnonzero(self.up + self.down)
        return {int(n): (int(self.up[n]), int(self.down[n])) for n in seen}


def run_counts(
    field: AlphaField,
    steps: int,
    seed: int,
    start: WalkState | tuple[int, int] = (0, 1),
    n_cap: int = 4096,
    _cache: _TableCache | None = None,
) -> NormCounts:
    """Simulate without storing the path, tallying norms below ``n_cap``."""
    if steps < 1:
        raise ValueError("steps must be positive")
    i, j = WalkState(*start).validate()
    cache = _cache or _TableCache(field, max(64, 2 * (i + j) + 8))
    up = np.zeros(n_cap, dtype=np.int64)
    down = np.zeros(n_cap, dtype=np.int64)
    boundary = np.zeros(n_cap, dtype=np.int64)
    visits = np.zeros(n_cap, dtype=np.int64)
    rng = _rng(seed)
    done = 0
    while done < steps:
        u = rng.random(min(CHUNK, steps - done))
        used = 0
        while used < u.size:
            k, i, j = _run_counts(i, j, u[used:], cache.table, cache.rank_cap, up, down, boundary, visits)
            used += k
            if used < u.size:
                cache.ensure(i + j)
        done += u.size
    return NormCounts(up, down, boundary, visits, steps)


def run_replicas(
    field: AlphaField,
    steps: int,
    replicas: int,
    seed: int,
    start: WalkState | tuple[int, int] = (0, 1),
    n_cap: int = 4096,
) -> NormCounts:
    """Pooled :func:`run_counts` over ``replicas`` independent streams split from ``seed``."""
    children = np.random.SeedSequence(seed).spawn(replicas)
    cache = _TableCache(field)
    total = None
    for child in children:
        one = run_counts(field, steps, int(child.generate_state(1, np.uint64)[0]), start, n_cap, cache)
        total = one if total is None else total.merge(one)
    return total


def norm_transition_counts(traj: Trajectory) -> dict[int, tuple[int, int]]:
    """Map each norm ``n`` to ``(moves n -> n+1, moves n -> n-1)`` along the path."""
    if traj.step_count < 1 and traj.I.size < 1:
        raise ValueError("empty trajectory")
    n = traj.N
    src = n[:-1]
    rising = n[1:] > src
    size = int(src.max()) + 1 if src.size else 0
    up = np.bincount(src[rising], minlength=size)
    down = np.bincount(src[~rising], minlength=size)
    return {int(k): (int(up[k]), int(down[k])) for k in np.flatnonzero(up + down)}


def trajectory_counts(traj: Trajectory) -> NormCounts:
    """The :class:`NormCounts` tally of a recorded path (the last state is not a visit)."""
    n = traj.N[:-1]
    size = int(n.max()) + 2 if n.size else 1
    rising = traj.N[1:] > n
    return NormCounts(
        np.bincount(n[rising], minlength=size),
        np.bincount(n[~rising], minlength=size),
        np.bincount(n[traj.I[:-1] == 0], minlength=size),
        np.bincount(n, minlength=size),
        traj.step_count,
    )
