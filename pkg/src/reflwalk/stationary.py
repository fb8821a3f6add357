"""Steady-state ratios ``p(a, (i, j)) = lim P(S = (i, j)) / P(S = 0)`` on a truncated wedge.

Every state obeys one balance equation ``p(n) = (1/4) * sum(weight * p(neighbour))``
whose weights come from the four-queue rates scaled so that each state
leaves at total rate 4.  :func:`inflow_terms` spells the nine boundary
cases out one by one; the solvers only ever see the resulting rows.

Truncation at ``rank_max`` needs a rule for the neighbours of rank
``rank_max + 1``.  The default ``"reflect"`` closure suppresses upward
moves out of the top rank, which turns the truncated system into the
balance equations of an honest finite chain: its solution is unique,
keeps ``p(0, 1) = 4`` exactly and is exact for the simple walk at every
rank.  ``"extrapolate"`` instead copies the value of the state one step
down the diagonal into the missing neighbour; that system is
over-determined, so the origin's own equation is the one traded for the
normalisation and ``p(0, 1)`` is only approximately 4.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numba
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from reflwalk._index import rank_offset, rank_size, wedge_index, wedge_states
from reflwalk.alpha import AlphaField, DiagonalLimits

CLOSURES = ("reflect", "extrapolate")
METHODS = ("direct", "sweep")


class SolverError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


def q_factor(i: int, j: int) -> float:
    """Ratio ``q / p`` at ``(i, j)``: 8 at the origin, 2 on the axis and diagonal, else 1."""
    if j == 0:
        return 8.0
    if i == 0 or i == j:
        return 2.0
    return 1.0


def q_factors(states: np.ndarray) -> np.ndarray:
    i, j = states[:, 0], states[:, 1]
    return np.where(j == 0, 8.0, np.where((i == 0) | (i == j), 2.0, 1.0))


def inflow_terms(alpha, i: int, j: int) -> list[tuple[tuple[int, int], float]]:
    """The balance equation of ``(i, j)`` as ``[(source, weight), ...]``.

    ``p(i, j) = (1/4) * sum(weight * p(source))``.  ``alpha(i, j)`` must
    return the coefficient at a state.  The weight on the origin in the
    equation for ``(0, 1)`` is 4: the origin leaves at rate 4 and only to
    ``(0, 1)``.
    """
    n = i + j
    if n == 0:
        return [((0, 1), 1.0)]
    if (i, j) == (0, 1):
        return [((0, 0), 4.0), ((1, 1), 2.0), ((0, 2), 1.0)]
    if i == 0:
        return [
            ((0, n - 1), 1.0),
            ((0, n + 1), 1.0),
            ((1, n), 1.0 + 4.0 * alpha(1, n) / (n + 1)),
        ]
    if (i, j) == (1, 1):
        return [((0, 1), 2.0), ((1, 2), 1.0 - 4.0 * alpha(1, 2) / 3.0)]
    if i == j:
        return [
            ((i - 1, i), 1.0 - 4.0 * alpha(i - 1, i) / (n - 1)),
            ((i, i + 1), 1.0 - 4.0 * alpha(i, i + 1) / (n + 1)),
        ]
    if (i, j) == (1, 2):
        # 4 * alpha / (n + 1) with n = 3 is alpha itself
        return [((0, 2), 2.0), ((1, 1), 2.0), ((2, 2), 2.0), ((1, 3), 1.0 - alpha(1, 3))]
    if i == 1:
        return [
            ((0, j), 2.0),
            ((1, j - 1), 1.0 + 4.0 * alpha(1, j - 1) / (n - 1)),
            ((2, j), 1.0 + 4.0 * alpha(2, j) / (n + 1)),
            ((1, j + 1), 1.0 - 4.0 * alpha(1, j + 1) / (n + 1)),
        ]
    if j == i + 1:
        return [
            ((i - 1, j), 1.0 - 4.0 * alpha(i - 1, j) / (n - 1)),
            ((i, i), 2.0),
            ((i + 1, i + 1), 2.0),
            ((i, j + 1), 1.0 - 4.0 * alpha(i, j + 1) / (n + 1)),
        ]
    return [
        ((i - 1, j), 1.0 - 4.0 * alpha(i - 1, j) / (n - 1)),
        ((i, j - 1), 1.0 + 4.0 * alpha(i, j - 1) / (n - 1)),
        ((i + 1, j), 1.0 + 4.0 * alpha(i + 1, j) / (n + 1)),
        ((i, j + 1), 1.0 - 4.0 * alpha(i, j + 1) / (n + 1)),
    ]


def _exit_rate_at_top(i: int, j: int) -> float:
    """Total rate left at the top rank once upward moves are suppressed."""
    return 1.0 if i == 0 else 2.0


@dataclass
class _System:
    """Rows ``out[s] * p[s] = sum_k coef[k] * p[src[k]]`` in CSR layout."""

    states: np.ndarray
    out: np.ndarray
    indptr: np.ndarray
    src: np.ndarray
    coef: np.ndarray


def build_system(field: AlphaField, rank_max: int, closure: str = "reflect") -> _System:
    if closure not in CLOSURES:
        raise ValueError(f"closure must be one of {CLOSURES}")
    table = field.rank_table(rank_max + 1)

    def alpha(i, j):
        return table[wedge_index(i, j)]

    states = wedge_states(rank_max)
    out = np.full(len(states), 4.0)
    indptr = [0]
    src: list[int] = []
    coef: list[float] = []
    for s, (i, j) in enumerate(states):
        i, j = int(i), int(j)
        top = i + j == rank_max
        for (a, b), w in inflow_terms(alpha, i, j):
            if a + b <= rank_max:
                src.append(wedge_index(a, b))
                coef.append(w)
            elif closure == "extrapolate":
                # the missing neighbour borrows the q-value one diagonal step down
                a2, b2 = (0, b - 2) if a == 0 else (a - 1, b - 1)
                src.append(wedge_index(a2, b2))
                coef.append(w * q_factor(a2, b2) / q_factor(a, b))
        if top and closure == "reflect":
            out[s] = _exit_rate_at_top(i, j)
        indptr.append(len(src))
    return _System(states, out, np.asarray(indptr, dtype=np.int64), np.asarray(src, dtype=np.int64), np.asarray(coef))


def _residuals(system: _System, p: np.ndarray) -> np.ndarray:
    """Per-state residual of ``p(n) - (1/out) * inflow`` (the normalised form)."""
    counts = np.diff(system.indptr)
    rows = np.repeat(np.arange(len(p)), counts)
    inflow = np.bincount(rows, weights=system.coef * p[system.src], minlength=len(p))
    return np.abs(p - inflow / system.out)


def _solve_direct(system: _System) -> np.ndarray:
    n = len(system.out)
    counts = np.diff(system.indptr)
    rows = np.repeat(np.arange(n), counts)
    mat = sp.csr_matrix((-system.coef, (rows, system.src)), shape=(n, n)) + sp.diags(system.out)
    mat = mat.tolil()
    # the origin row becomes the normalisation p(0, 0) = 1
    mat[0, :] = 0.0
    mat[0, 0] = 1.0
    rhs = np.zeros(n)
    rhs[0] = 1.0
    p = spla.spsolve(mat.tocsc(), rhs)
    return p / p[0]


@numba.njit(cache=True)
def _sweep_kernel(order, indptr, src, coef, out, p, tol, max_iters, check_every):
    """Gauss-Seidel sweeps in ``order``; returns (iterations, last change, last residual, status).

    status 0 = converged, 1 = iteration cap, 2 = residual grew on three consecutive checks.
    """
    n = p.size
    prev_res = np.inf
    growth = 0
    change = np.inf
    res = np.inf
    for it in range(1, max_iters + 1):
        change = 0.0
        for s in order:
            acc = 0.0
            for k in range(indptr[s], indptr[s + 1]):
                acc += coef[k] * p[src[k]]
            new = acc / out[s]
            d = abs(new - p[s])
            if d > change:
                change = d
            p[s] = new
        if it % check_every == 0 or change <= tol:
            res = 0.0
            for s in range(n):
                acc = 0.0
                for k in range(indptr[s], indptr[s + 1]):
                    acc += coef[k] * p[src[k]]
                if s == 0:
                    continue
                r = abs(p[s] - acc / out[s])
                if r > res:
                    res = r
            if change <= tol and res <= tol:
                return it, change, res, 0
            if res > prev_res:
                growth += 1
                if growth >= 3:
                    return it, change, res, 2
            else:
                growth = 0
            prev_res = res
    return max_iters, change, res, 1


def _sweep_order(states: np.ndarray) -> np.ndarray:
    """Ranks ascending; inside a rank from ``i = 1`` to the diagonal, then the axis state."""
    order = []
    for n in range(1, int(states[:, 0].max() + states[:, 1].max()) + 1):
        base = rank_offset(n)
        size = rank_size(n)
        if base + size > len(states):
            break
        order.extend(range(base + 1, base + size))
        order.append(base)
    return np.asarray(order, dtype=np.int64)


@dataclass
class RatioTable:
    """Solved ratios on all wedge states of rank ``<= rank_max``, flat in rank order."""

    rank_max: int
    states: np.ndarray
    p: np.ndarray
    q: np.ndarray
    residual_at_state: np.ndarray
    residual: float
    closure: str = "reflect"
    method: str = "direct"
    iterations: int = 0
    diagnostics: dict = dc_field(default_factory=dict)

    def index(self, i: int, j: int) -> int:
        if not 0 <= i <= j or i + j > self.rank_max:
            raise KeyError((i, j))
        return wedge_index(i, j)

    def p_at(self, i: int, j: int) -> float:
        return float(self.p[self.index(i, j)])

    def q_at(self, i: int, j: int) -> float:
        return float(self.q[self.index(i, j)])

    @property
    def p_values(self) -> dict[tuple[int, int], float]:
        return {(int(a), int(b)): float(v) for (a, b), v in zip(self.states, self.p)}

    @property
    def q_values(self) -> dict[tuple[int, int], float]:
        return {(int(a), int(b)): float(v) for (a, b), v in zip(self.states, self.q)}

    def rank_slice(self, n: int) -> slice:
        start = rank_offset(n)
        return slice(start, start + rank_size(n))

    def rows(self):
        for (i, j), p, q, r in zip(self.states, self.p, self.q, self.residual_at_state):
            yield int(i), int(j), int(i + j), float(p), float(q), float(r)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "rank", "p", "q", "residual_at_state"])
            for i, j, n, p, q, r in self.rows():
                w.writerow([i, j, n, repr(p), repr(q), repr(r)])


def solve_ratios(
    field: AlphaField,
    rank_max: int,
    tol: float = 1e-10,
    max_iters: int = 1_000_000,
    closure: str = "reflect",
    method: str = "direct",
) -> RatioTable:
    """Solve the truncated balance system.

    ``method="direct"`` factorises the sparse system once; ``"sweep"``
    runs Gauss-Seidel sweeps in rank order until both the sweep change and
    the residual are below ``tol``.
    """
    if rank_max < 6:
        raise ValueError("rank_max must be >= 6")
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    system = build_system(field, rank_max, closure)
    iterations = 0
    diagnostics: dict = {}
    if method == "direct":
        p = _solve_direct(system)
    else:
        p = np.ones(len(system.out))
        p[1:] = 4.0
        order = _sweep_order(system.states)
        iterations, change, res, status = _sweep_kernel(
            order, system.indptr, system.src, system.coef, system.out, p, tol, max_iters, 10
        )
        diagnostics = {"sweeps": iterations, "last_change": change, "last_residual": res}
        if status == 2:
            raise SolverError("residual grew on three consecutive checks", diagnostics)
        diagnostics["converged"] = status == 0
    res_state = _residuals(system, p)
    if not np.all(np.isfinite(p)) or np.any(p <= 0):
        bad = system.states[np.flatnonzero(~(p > 0))[0]]
        raise SolverError(f"non-positive ratio at {tuple(int(x) for x in bad)}", {"residual": float(np.nanmax(res_state))})
    q = p * q_factors(system.states)
    return RatioTable(
        rank_max, system.states, p, q, res_state, float(res_state.max()), closure, method, iterations, diagnostics
    )


def rank_sums(table: RatioTable) -> dict[int, float]:
    """``sum of q`` over each rank."""
    return {n: float(math.fsum(table.q[table.rank_slice(n)])) for n in range(table.rank_max + 1)}


# ---------------------------------------------------------------------------
# asymptotic checks between neighbouring ranks

EXPANSIONS = ("rank_step_even", "rank_step_odd", "lateral_even", "lateral_odd")


@dataclass
class ExpansionCheck:
    """Deviation ``|observed ratio - predicted factor|`` for every admissible ``l``."""

    name: str
    l: np.ndarray
    observed: np.ndarray
    predicted: np.ndarray

    @property
    def deviations(self) -> np.ndarray:
        return np.abs(self.observed - self.predicted)

    @property
    def max_deviation(self) -> float:
        return float(self.deviations.max()) if self.l.size else 0.0

    @property
    def worst_l(self) -> int:
        return int(self.l[np.argmax(self.deviations)]) if self.l.size else -1


@dataclass
class ExpansionReport:
    k: int
    checks: dict[str, ExpansionCheck]
    axis_gap_even: float  # q(0, 2k) - q(1, 2k-1)
    axis_gap_odd: float  # q(0, 2k+1) - q(1, 2k)

    def max_deviations(self) -> dict[str, float]:
        return {name: c.max_deviation for name, c in self.checks.items()}

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "max_deviation": self.max_deviations(),
            "worst_l": {name: c.worst_l for name, c in self.checks.items()},
            "axis_gap_even": self.axis_gap_even,
            "axis_gap_odd": self.axis_gap_odd,
        }


def verify_lemma1(table: RatioTable, limits: DiagonalLimits, k: int) -> ExpansionReport:
    """Compare neighbouring q-ratios around rank ``2k`` with their first-order predictions.

    * ``rank_step_even``: ``q(k-l, k+l) / q(k-l+1, k+l)`` against
      ``1 + 2(a*_{2l-1} + a*_{2l}) / k`` for ``1 <= l <= k-1``;
    * ``rank_step_odd``: ``q(k-l+1, k+l) / q(k-l+1, k+l-1)`` against
      ``1 + 2(a*_{2l-2} + a*_{2l-1}) / k`` for ``2 <= l <= k``;
    * ``lateral_even``: ``q(k-l, k+l) / q(k-l+1, k+l-1)`` against
      ``1 + (2a*_{2l-2} + 4a*_{2l-1} + 2a*_{2l}) / k`` for ``2 <= l <= k-1``;
    * ``lateral_odd``: ``q(k-l, k+l+1) / q(k-l+1, k+l)`` against
      ``1 + (2a*_{2l-1} + 4a*_{2l} + 2a*_{2l+1}) / k`` for ``1 <= l <= k-1``.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    if 2 * k + 2 > table.rank_max:
        raise ValueError(f"k={k} needs rank_max >= {2 * k + 2}, table has {table.rank_max}")
    a = limits.star_array(2 * k + 2)
    q = table.q_at

    def check(name, ls, num, den, pred):
        ls = np.asarray(list(ls), dtype=np.int64)
        obs = np.array([q(*num(l)) / q(*den(l)) for l in ls])
        return ExpansionCheck(name, ls, obs, np.array([pred(l) for l in ls]))

    checks = {
        "rank_step_even": check(
            "rank_step_even", range(1, k), lambda l: (k - l, k + l), lambda l: (k - l + 1, k + l),
            lambda l: 1 + 2 * (a[2 * l - 1] + a[2 * l]) / k,
        ),
        "rank_step_odd": check(
            "rank_step_odd", range(2, k + 1), lambda l: (k - l + 1, k + l), lambda l: (k - l + 1, k + l - 1),
            lambda l: 1 + 2 * (a[2 * l - 2] + a[2 * l - 1]) / k,
        ),
        "lateral_even": check(
            "lateral_even", range(2, k), lambda l: (k - l, k + l), lambda l: (k - l + 1, k + l - 1),
            lambda l: 1 + (2 * a[2 * l - 2] + 4 * a[2 * l - 1] + 2 * a[2 * l]) / k,
        ),
        "lateral_odd": check(
            "lateral_odd", range(1, k), lambda l: (k - l, k + l + 1), lambda l: (k - l + 1, k + l),
            lambda l: 1 + (2 * a[2 * l - 1] + 4 * a[2 * l] + 2 * a[2 * l + 1]) / k,
        ),
    }
    return ExpansionReport(k, checks, q(0, 2 * k) - q(1, 2 * k - 1), q(0, 2 * k + 1) - q(1, 2 * k))


@dataclass
class DecayFit:
    """Two-scale comparison of the same deviation at ``k1 < k2``."""

    k1: int
    k2: int
    dev1: float
    dev2: float

    @property
    def ratio(self) -> float:
        return self.dev1 / self.dev2 if self.dev2 > 0 else math.inf

    @property
    def exponent(self) -> float:
        """Fitted ``p`` in ``dev ~ c / k**p``."""
        if self.dev1 <= 0 or self.dev2 <= 0:
            return math.nan
        return math.log(self.dev1 / self.dev2) / math.log(self.k2 / self.k1)

    @property
    def c_fit(self) -> float:
        """``c`` in ``dev ~ c / k**2`` taken at the larger scale."""
        return self.dev2 * self.k2**2


def expansion_decay(table: RatioTable, limits: DiagonalLimits, k1: int, k2: int) -> dict[str, DecayFit]:
    r1 = verify_lemma1(table, limits, k1).max_deviations()
    r2 = verify_lemma1(table, limits, k2).max_deviations()
    return {name: DecayFit(k1, k2, r1[name], r2[name]) for name in r1}

