"""Monte Carlo estimates of the norm's up/down probabilities and of the index statistic.

For each norm ``n`` the pooled counts give ``P_n`` (next step raises the
norm) and ``Q_n = 1 - P_n``.  The index statistic is ``n ln(P_n / Q_n)``;
its large-``n`` value is what the psi-index describes.  Visits thin out at
large ``n``, so only a window with at least ``min_visits`` visits per norm
is used, and the answer is a desk-scale estimate rather than a limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Iterable

import numpy as np

from reflwalk import _io
from reflwalk.walk import NormCounts, Trajectory, trajectory_counts

MIN_VISITS = 1000
CAVEAT_N = 50


class InsufficientCountsError(ValueError):
    pass


def pool(sources: Iterable[Trajectory | NormCounts]) -> NormCounts:
    """Merge trajectories and/or count tallies (CTMC jump chains included) into one tally."""
    total = None
    for src in sources:
        c = trajectory_counts(src) if isinstance(src, Trajectory) else src
        total = c if total is None else total.merge(c)
    if total is None:
        raise InsufficientCountsError("no trajectories given")
    return total


def _longest_run(mask: np.ndarray) -> tuple[int, int] | None:
    best, start = None, None
    for n, ok in enumerate(np.append(mask, False)):
        if ok and start is None:
            start = n
        elif not ok and start is not None:
            if best is None or n - start > best[1] - best[0] + 1:
                best = (start, n - 1)
            start = None
    return best


@dataclass
class NormEstimate:
    P: float
    Q: float
    ratio_pow_n: float
    index_stat: float  # n ln(P/Q)
    stderr: float  # standard error of index_stat
    visits: int


@dataclass
class IndexEstimate:
    per_n: dict[int, NormEstimate]
    psi_hat: float
    psi_stderr: float
    n_range: tuple[int, int]
    readings: dict = dc_field(default_factory=dict)
    caveat: str = ""

    def to_dict(self) -> dict:
        return {
            "psi_hat": self.psi_hat,
            "psi_stderr": self.psi_stderr,
            "n_range": list(self.n_range),
            "readings": self.readings,
            "caveat": self.caveat,
        }


def index_readings(kappa: float) -> dict[str, float]:
    """Reference values of the index statistic under the two readings of kappa.

    ``log_plus_boundary`` is ``ln(kappa) + 1`` (the simple walk's boundary
    term 1 plus the log of kappa; ``8a + 1`` for a constant field);
    ``kappa`` takes the index to be kappa itself.
    """
    return {"log_plus_boundary": math.log(kappa) + 1.0, "kappa": kappa}


def estimate_transition_ratios(
    sources: Iterable[Trajectory | NormCounts],
    min_visits: int = MIN_VISITS,
    kappa: float | None = None,
) -> IndexEstimate:
    """Per-norm ``P_n, Q_n`` on the longest run of norms with ``>= min_visits`` visits each.

    ``psi_hat`` is the inverse-variance weighted mean of ``n ln(P_n/Q_n)``
    over that run; standard errors use the binomial delta method
    ``se = n / sqrt(V P Q)`` and ignore serial correlation.
    """
    c = pool(sources)
    n_all = np.arange(c.up.size)
    visits = c.up + c.down
    ok = (visits >= min_visits) & (c.up > 0) & (c.down > 0) & (n_all >= 1)
    run = _longest_run(ok)
    if run is None:
        raise InsufficientCountsError(f"no norm has {min_visits} visits with both moves observed")
    per_n: dict[int, NormEstimate] = {}
    ys, ws = [], []
    for n in range(run[0], run[1] + 1):
        v = int(visits[n])
        P = c.up[n] / v
        Q = c.down[n] / v
        y = n * (math.log(P) - math.log(Q))
        se = n / math.sqrt(v * P * Q)
        per_n[n] = NormEstimate(float(P), float(Q), math.exp(y), y, se, v)
        ys.append(y)
        ws.append(1.0 / se**2)
    ws_arr = np.asarray(ws)
    psi = float(np.dot(ws_arr, ys) / ws_arr.sum())
    psi_se = float(1.0 / math.sqrt(ws_arr.sum()))
    caveat = ""
    if run[1] < CAVEAT_N:
        caveat = f"window ends at n={run[1]} < {CAVEAT_N}; the estimate is far from the n -> infinity limit"
    readings = index_readings(kappa) if kappa is not None else {}
    return IndexEstimate(per_n, psi, psi_se, run, readings, caveat)


@dataclass
class BoundaryEstimate:
    p_n: float
    stderr: float
    ratio_minus_one: float  # P_n/Q_n - 1, to set against p_n
    visits: int


def estimate_boundary_probability(
    sources: Iterable[Trajectory | NormCounts], min_visits: int = MIN_VISITS
) -> dict[int, BoundaryEstimate]:
    """Fraction of visits to norm ``n`` that sit on the axis, for every ``n`` with enough visits."""
    c = pool(sources)
    visits = c.up + c.down
    out = {}
    for n in np.flatnonzero(visits >= min_visits):
        n = int(n)
        if n == 0:
            continue
        v = int(visits[n])
        p = c.boundary[n] / v
        se = math.sqrt(p * (1 - p) / v)
        ratio = c.up[n] / c.down[n] - 1.0 if c.down[n] > 0 else math.inf
        out[n] = BoundaryEstimate(float(p), se, float(ratio), v)
    if not out:
        raise InsufficientCountsError(f"no norm has {min_visits} visits")
    return out


def write_csv(path: str | Path, index: IndexEstimate, boundary: dict[int, BoundaryEstimate] | None = None) -> None:
    boundary = boundary or {}
    rows = (
        (n, e.P, e.Q, e.ratio_pow_n, boundary[n].p_n if n in boundary else float("nan"), e.stderr)
        for n, e in index.per_n.items()
    )
    _io.write_csv(path, ["n", "P_n", "Q_n", "ratio_pow_n", "p_n", "stderr"], rows)
