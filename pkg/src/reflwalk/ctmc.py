"""Continuous-time network of two coupled single-server queues.

Queue lengths ``(Q1, Q2)`` live on the full quarter plane.  Every state has
total event rate 4: each queue has an arrival stream and a service stream
whose rates are ``1 -/+ 4 alpha / N`` depending on which queue is shorter,
and an empty queue's service slot becomes a "negative service" that adds a
customer.  The jump chain of this process is the reflected walk.

The simulator accumulates sojourn times into batches after a warm-up
period; ratios of occupation times to the origin's time estimate the
steady-state ratios, with batch-means standard errors.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import NamedTuple

import numba
import numpy as np

from reflwalk._index import wedge_index
from reflwalk.alpha import AlphaField
from reflwalk.walk import CHUNK, NormCounts, _TableCache, _offset

RANK_CAP = 200


class StarvationError(RuntimeError):
    """The origin was never occupied after warm-up, so no ratio exists."""


class NetworkState(NamedTuple):
    Q1: int
    Q2: int
    clock: float = 0.0

    @property
    def N(self) -> int:
        return self.Q1 + self.Q2


class RateVector(NamedTuple):
    arrival1: float
    service1: float
    arrival2: float
    service2: float

    @property
    def total(self) -> float:
        return self.arrival1 + self.service1 + self.arrival2 + self.service2


def rate_vector(field: AlphaField, s: NetworkState | tuple) -> RateVector:
    q1, q2 = int(s[0]), int(s[1])
    if q1 < 0 or q2 < 0:
        raise ValueError("queue lengths must be non-negative")
    if q1 == 0 or q2 == 0 or q1 == q2:
        return RateVector(1.0, 1.0, 1.0, 1.0)
    lo, hi = min(q1, q2), max(q1, q2)
    b = 4.0 * field.evaluate(lo, hi) / (q1 + q2)
    if q1 < q2:
        return RateVector(1.0 - b, 1.0 + b, 1.0 + b, 1.0 - b)
    return RateVector(1.0 + b, 1.0 - b, 1.0 - b, 1.0 + b)


def plane_index(q1: int, q2: int) -> int:
    n = q1 + q2
    return n * (n + 1) // 2 + q1


def plane_states(rank_max: int) -> np.ndarray:
    out = [(q1, n - q1) for n in range(rank_max + 1) for q1 in range(n + 1)]
    return np.asarray(out, dtype=np.int64)


@numba.njit(cache=True)
def _ctmc_chunk(
    q1, q2, clock, exps, us, table, table_cap, reflect_rank, horizon, warm, batch_len,
    times, overflow, rank_cap, norm_up, norm_down, norm_axis, counters,
):
    """Run events until the chunk, the horizon or the coefficient table runs out.

    counters = [state changes, null events]; returns (used, q1, q2, clock, done).
    """
    n_batches = times.shape[0]
    for k in range(exps.size):
        n = q1 + q2
        if n + 1 >= table_cap:
            return k, q1, q2, clock, False
        dt = exps[k] * 0.25
        t0 = clock
        t1 = min(clock + dt, horizon)
        # book the sojourn [t0, t1) into the post-warm-up batches
        a = max(t0, warm)
        if t1 > a:
            if n <= rank_cap:
                idx = n * (n + 1) // 2 + q1
            else:
                idx = -1
            while a < t1:
                b = int((a - warm) / batch_len)
                if b >= n_batches:
                    b = n_batches - 1
                edge = warm + (b + 1) * batch_len
                if edge <= a and b < n_batches - 1:
                    # a sits on a batch edge that rounded down
                    b += 1
                    edge = warm + (b + 1) * batch_len
                if b == n_batches - 1:
                    edge = t1
                stop = min(t1, edge)
                if idx >= 0:
                    times[b, idx] += stop - a
                else:
                    overflow[b] += stop - a
                a = stop
        clock = clock + dt
        if clock >= horizon:
            return k + 1, q1, q2, horizon, True
        # rates in the order arrival1, service1, arrival2, service2
        if q1 == 0 or q2 == 0 or q1 == q2:
            r0 = 1.0
            r1 = 1.0
            r2 = 1.0
        else:
            if q1 < q2:
                beta = 4.0 * table[_offset(n) + q1] / n
                r0 = 1.0 - beta
                r1 = 1.0 + beta
                r2 = 1.0 + beta
            else:
                beta = 4.0 * table[_offset(n) + q2] / n
                r0 = 1.0 + beta
                r1 = 1.0 - beta
                r2 = 1.0 - beta
        x = us[k] * 4.0
        n1 = q1
        n2 = q2
        if x < r0:
            n1 = q1 + 1
        elif x < r0 + r1:
            n1 = q1 - 1 if q1 > 0 else q1 + 1
        elif x < r0 + r1 + r2:
            n2 = q2 + 1
        else:
            n2 = q2 - 1 if q2 > 0 else q2 + 1
        if reflect_rank > 0 and n1 + n2 > reflect_rank:
            counters[1] += 1
            continue
        counters[0] += 1
        if n < norm_up.size:
            if q1 == 0 or q2 == 0:
                norm_axis[n] += 1
            if n1 + n2 > n:
                norm_up[n] += 1
            else:
                norm_down[n] += 1
        q1 = n1
        q2 = n2
    return exps.size, q1, q2, clock, False


@dataclass
class OccupancyHistogram:
    """Post-warm-up occupation times on the full plane, split into equal-length batches."""

    rank_cap: int
    batch_times: np.ndarray  # (batches, plane states up to rank_cap)
    batch_overflow: np.ndarray
    horizon: float
    warmup: float
    seed: int
    state_changes: int
    null_events: int
    norm_up: np.ndarray
    norm_down: np.ndarray
    norm_axis: np.ndarray
    final_state: NetworkState
    reflect_rank: int = 0
    meta: dict = dc_field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return self.batch_times.sum(axis=0)

    @property
    def overflow_time(self) -> float:
        return float(self.batch_overflow.sum())

    @property
    def total_time(self) -> float:
        return float(math.fsum(self.times) + self.overflow_time)

    @property
    def time_in_state(self) -> dict[tuple[int, int], float]:
        st = plane_states(self.rank_cap)
        t = self.times
        return {(int(a), int(b)): float(v) for (a, b), v in zip(st, t) if v > 0}

    def time_at(self, q1: int, q2: int) -> float:
        if q1 + q2 > self.rank_cap:
            raise KeyError((q1, q2))
        return float(self.times[plane_index(q1, q2)])

    @property
    def events(self) -> int:
        return self.state_changes

    def norm_counts(self) -> NormCounts:
        return NormCounts(
            self.norm_up, self.norm_down, self.norm_axis, self.norm_up + self.norm_down, self.state_changes
        )

    def ratio_to_origin(self) -> tuple[np.ndarray, np.ndarray]:
        """Per plane state: ``time / origin time`` and its batch-means standard error."""
        return _batch_ratio(self.batch_times, self.batch_times[:, 0])

    def to_csv(self, path: str | Path) -> None:
        ratio, se = self.ratio_to_origin()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "time", "ratio_to_origin", "stderr"])
            for (a, b), t, r, e in zip(plane_states(self.rank_cap), self.times, ratio, se):
                if t > 0:
                    w.writerow([int(a), int(b), repr(float(t)), repr(float(r)), repr(float(e))])


def _batch_ratio(y: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Ratio of sums ``sum Y / sum X`` with the delta-method batch-means standard error."""
    B = y.shape[0]
    sx = x.sum()
    if sx <= 0:
        raise StarvationError("the origin was not occupied after warm-up; the horizon is too short or the walk escapes")
    r = y.sum(axis=0) / sx
    if B < 2:
        return r, np.full_like(r, np.nan)
    resid = y - r[None, :] * x[:, None] if y.ndim == 2 else y - r * x
    se = np.sqrt((resid**2).sum(axis=0) / (B * (B - 1))) / (sx / B)
    return r, se


def simulate_ctmc(
    field: AlphaField,
    horizon: float,
    seed: int,
    warmup_fraction: float = 0.1,
    batches: int = 20,
    rank_cap: int = RANK_CAP,
    reflect_rank: int = 0,
    start: tuple[int, int] = (0, 0),
    norm_cap: int = 4096,
) -> OccupancyHistogram:
    """Event-by-event simulation up to time ``horizon``.

    ``reflect_rank > 0`` rejects every event that would take ``Q1 + Q2``
    above it (the event still happens in time, the state stays put), which
    is the continuous-time version of the truncated chain used by the
    stationary solver.  Occupation beyond ``rank_cap`` is pooled per batch.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if not 0.0 <= warmup_fraction < 1.0:
        raise ValueError("warm-up fraction must lie in [0, 1)")
    if batches < 1:
        raise ValueError("need at least one batch")
    cache = _TableCache(field, max(64, reflect_rank + 2))
    size = (rank_cap + 1) * (rank_cap + 2) // 2
    times = np.zeros((batches, size))
    overflow = np.zeros(batches)
    up = np.zeros(norm_cap, dtype=np.int64)
    down = np.zeros(norm_cap, dtype=np.int64)
    axis = np.zeros(norm_cap, dtype=np.int64)
    counters = np.zeros(2, dtype=np.int64)
    warm = warmup_fraction * horizon
    batch_len = (horizon - warm) / batches
    rng = np.random.Generator(np.random.PCG64(seed))
    q1, q2 = int(start[0]), int(start[1])
    clock = 0.0
    done = False
    while not done:
        exps = rng.standard_exponential(CHUNK)
        us = rng.random(CHUNK)
        used = 0
        while used < CHUNK and not done:
            k, q1, q2, clock, done = _ctmc_chunk(
                q1, q2, clock, exps[used:], us[used:], cache.table, cache.rank_cap, reflect_rank,
                float(horizon), warm, batch_len, times, overflow, rank_cap, up, down, axis, counters,
            )
            used += k
            if not done and used < CHUNK:
                cache.ensure(q1 + q2 + 2)
    return OccupancyHistogram(
        rank_cap, times, overflow, float(horizon), warm, seed, int(counters[0]), int(counters[1]),
        up, down, axis, NetworkState(q1, q2, clock), reflect_rank,
    )


@dataclass
class EmpiricalRatios:
    """Wedge-folded occupation ratios ``p_hat(i, j)`` with standard errors."""

    states: np.ndarray
    p: np.ndarray
    stderr: np.ndarray
    origin_time: float

    def p_at(self, i: int, j: int) -> float:
        return float(self.p[wedge_index(i, j)])

    def se_at(self, i: int, j: int) -> float:
        return float(self.stderr[wedge_index(i, j)])

    @property
    def p_values(self) -> dict[tuple[int, int], float]:
        return {(int(a), int(b)): float(v) for (a, b), v in zip(self.states, self.p)}


def occupancy_to_ratio_table(hist: OccupancyHistogram, rank_max: int | None = None) -> EmpiricalRatios:
    """Fold ``(i, j)`` and ``(j, i)`` together and divide by the origin's time."""
    from reflwalk._index import wedge_states

    rank_max = hist.rank_cap if rank_max is None else min(rank_max, hist.rank_cap)
    st = wedge_states(rank_max)
    a = np.array([plane_index(i, j) for i, j in st])
    b = np.array([plane_index(j, i) for i, j in st])
    folded = hist.batch_times[:, a] + np.where((st[:, 0] != st[:, 1])[None, :], hist.batch_times[:, b], 0.0)
    origin = hist.batch_times[:, 0]
    p, se = _batch_ratio(folded, origin)
    return EmpiricalRatios(st, p, se, float(origin.sum()))
