"""Coefficient fields ``alpha_(i, j)`` and their diagonal limits.

A field is stored as a vectorised "raw" function of ``(i, j)``; the
conventions ``alpha_(0, n) = alpha_(i, i) = 0`` and the admissibility bound
``|alpha_(i,j)| < min(C, (i + j) / 4)`` are applied on top of it by
:meth:`AlphaField.evaluate`.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, Mapping, Sequence

import numpy as np

from reflwalk._expr import Expression
from reflwalk._index import wedge_states


class AlphaConstraintError(ValueError):
    """A coefficient breaks ``|alpha| < min(C, N/4)`` (or a constructor bound)."""

    def __init__(self, message: str, pair: tuple[int, int] | None = None, value: float | None = None):
        super().__init__(message)
        self.pair = pair
        self.value = value


class DiagonalConvergenceError(ArithmeticError):
    """Diagonal differences do not contract, so no limit can be extrapolated."""


RawFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class AlphaField:
    """An admissible coefficient sequence ``a``.

    ``kind`` is one of ``"constant"``, ``"table"``, ``"expression"`` or
    ``"function"``; ``spec`` keeps the constructor arguments so the field can
    be serialised back into a config document.
    """

    kind: str
    bound_C: float
    raw: RawFn = dc_field(repr=False, compare=False)
    contraction_gamma: float | None = None
    spec: Mapping = dc_field(default_factory=dict, compare=False)
    # exact diagonal limits alpha*_m, when the constructor knows them
    exact_star: Callable[[np.ndarray], np.ndarray] | None = dc_field(default=None, repr=False, compare=False)

    def bound(self, i, j):
        return np.minimum(self.bound_C, (np.asarray(i) + np.asarray(j)) / 4.0)

    def evaluate(self, i: int, j: int) -> float:
        if i < 0 or j < i:
            raise ValueError(f"coefficients are indexed by 0 <= i <= j, got ({i}, {j})")
        if i == 0 or i == j:
            return 0.0
        value = float(self.raw(np.array([i]), np.array([j]))[0])
        limit = min(self.bound_C, (i + j) / 4.0)
        if not abs(value) < limit:
            raise AlphaConstraintError(
                f"|alpha_({i},{j})| = {abs(value):.6g} violates the bound {limit:.6g}",
                pair=(i, j),
                value=value,
            )
        return value

    def evaluate_many(self, i, j, check: bool = True) -> np.ndarray:
        """Vectorised :meth:`evaluate`; raises on the first inadmissible pair when ``check``."""
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        if np.any(i < 0) or np.any(j < i):
            raise ValueError("coefficients are indexed by 0 <= i <= j")
        values = np.zeros(np.broadcast(i, j).shape, dtype=float)
        live = (i > 0) & (i != j)
        if np.any(live):
            ii, jj = np.broadcast_to(i, values.shape)[live], np.broadcast_to(j, values.shape)[live]
            values[live] = np.broadcast_to(np.asarray(self.raw(ii, jj), dtype=float), ii.shape)
        if check:
            bad = ~(np.abs(values) < self.bound(i, j)) & live
            if np.any(bad):
                k = np.flatnonzero(bad.ravel())[0]
                bi = int(np.broadcast_to(i, values.shape).ravel()[k])
                bj = int(np.broadcast_to(j, values.shape).ravel()[k])
                v = float(values.ravel()[k])
                raise AlphaConstraintError(
                    f"|alpha_({bi},{bj})| = {abs(v):.6g} violates the bound "
                    f"{min(self.bound_C, (bi + bj) / 4):.6g}",
                    pair=(bi, bj),
                    value=v,
                )
        return values

    def rank_table(self, rank_max: int) -> np.ndarray:
        """Values for every wedge state up to ``rank_max`` in flat rank order."""
        st = wedge_states(rank_max)
        return self.evaluate_many(st[:, 0], st[:, 1])

    @property
    def is_theta(self) -> bool:
        return self.kind == "constant" and self.spec.get("alpha") == 0.0


def make_constant_field(alpha: float, bound_C: float = 1.0) -> AlphaField:
    alpha = float(alpha)
    if bound_C <= 0:
        raise ValueError("bound_C must be positive")
    if not abs(alpha) < bound_C:
        raise AlphaConstraintError(f"|alpha| = {abs(alpha)} must be below C = {bound_C}")

    def raw(i, j):
        return np.full(np.broadcast(i, j).shape, alpha)

    def star(m):
        m = np.asarray(m)
        return np.where(m == 0, 0.0, alpha)

    return AlphaField("constant", float(bound_C), raw, None, {"kind": "constant", "alpha": alpha, "bound_C": float(bound_C)}, star)


def theta() -> AlphaField:
    """The all-zero sequence: the simple reflected walk."""
    return make_constant_field(0.0, 1.0)


def make_table_field(
    limits: Mapping[int, float] | Sequence[tuple[int, float]],
    bound_C: float = 1.0,
    fill: str = "zero",
    approach: float = 0.0,
) -> AlphaField:
    """Field built from diagonal limits ``alpha*_m``.

    ``alpha_(i, j) = alpha*_{j-i} * (1 - approach**i)``, so the values reach
    their diagonal limit geometrically with ratio ``approach`` (0 means
    already diagonal-constant). Offsets missing from ``limits`` are filled by
    ``fill``: ``"zero"``, ``"last"`` (last listed value) or ``"periodic"``
    (listed values repeat with period ``max(m)``, starting at ``m = 1``).
    """
    pairs = dict(limits.items() if isinstance(limits, Mapping) else limits)
    pairs = {int(m): float(v) for m, v in pairs.items()}
    if not pairs or min(pairs) < 1:
        raise ValueError("table offsets must be >= 1 (alpha*_0 is forced to zero)")
    if fill not in ("zero", "last", "periodic"):
        raise ValueError(f"unknown fill rule {fill!r}")
    if not 0.0 <= approach < 1.0:
        raise ValueError("approach ratio must lie in [0, 1)")
    for m, v in pairs.items():
        if not abs(v) < bound_C:
            raise AlphaConstraintError(f"|alpha*_{m}| = {abs(v)} must be below C = {bound_C}")
    m_top = max(pairs)
    lut = np.zeros(m_top + 1)
    last = 0.0
    for m in range(1, m_top + 1):
        if m in pairs:
            last = pairs[m]
            lut[m] = last
        elif fill == "last":
            lut[m] = last
        elif fill == "periodic":
            # unlisted offsets inside the period are zero
            lut[m] = 0.0
    tail = lut[m_top] if fill == "last" else 0.0

    def star(m):
        m = np.asarray(m, dtype=np.int64)
        out = np.zeros(m.shape)
        if fill == "periodic":
            mm = np.where(m > 0, (m - 1) % m_top + 1, 0)
            out = lut[mm]
        else:
            inside = m <= m_top
            out[inside] = lut[m[inside]]
            out[~inside] = tail
        return np.where(m == 0, 0.0, out)

    def raw(i, j):
        i = np.asarray(i)
        return star(np.asarray(j) - i) * (1.0 - approach ** i)

    spec = {"kind": "table", "pairs": sorted(pairs.items()), "fill": fill, "approach": approach, "bound_C": float(bound_C)}
    gamma = approach if approach > 0 else None
    return AlphaField("table", float(bound_C), raw, gamma, spec, star)


def make_expression_field(source: str, bound_C: float = 1.0, gamma: float | None = None) -> AlphaField:
    """Field given by an arithmetic expression in ``i``, ``j``, ``n = i + j`` and ``m = j - i``."""
    expr = Expression(source, ["i", "j", "n", "m"])

    def raw(i, j):
        i = np.asarray(i, dtype=float)
        j = np.asarray(j, dtype=float)
        return expr(i=i, j=j, n=i + j, m=j - i)

    spec = {"kind": "expression", "expr": source, "bound_C": float(bound_C)}
    if gamma is not None:
        spec["gamma"] = gamma
    return AlphaField("expression", float(bound_C), raw, gamma, spec)


def make_function_field(fn: Callable[[int, int], float], bound_C: float = 1.0, gamma: float | None = None) -> AlphaField:
    """Wrap an arbitrary scalar callable ``fn(i, j)``; must be pure."""
    vec = np.vectorize(lambda a, b: float(fn(int(a), int(b))), otypes=[float])

    def raw(i, j):
        return vec(i, j)

    return AlphaField("function", float(bound_C), raw, gamma, {"kind": "function", "bound_C": float(bound_C)})


def field_from_spec(spec: Mapping) -> AlphaField:
    """Build a field from a config mapping (see the README for the schema)."""
    kind = spec.get("kind")
    C = float(spec.get("bound_C", 1.0))
    if kind == "constant":
        return make_constant_field(float(spec["alpha"]), C)
    if kind == "table":
        pairs = spec["pairs"]
        if isinstance(pairs, Mapping):
            pairs = [(int(k), float(v)) for k, v in pairs.items()]
        else:
            pairs = [(int(m), float(v)) for m, v in pairs]
        return make_table_field(pairs, C, spec.get("fill", "zero"), float(spec.get("approach", 0.0)))
    if kind == "expression":
        return make_expression_field(spec["expr"], C, spec.get("gamma"))
    raise ValueError(f"unknown field kind {kind!r}")


def parse_field(text: str, bound_C: float = 1.0) -> AlphaField:
    """Parse the short command-line form.

    ``theta`` (the zero field), ``constant:0.1``, ``table:0.2,-0.1`` (periodic diagonal limits starting
    at offset 1) and ``expr:0.2*(1-2**(-i))``.
    """
    kind, _, body = text.partition(":")
    kind = kind.strip().lower()
    if kind == "theta":
        return theta()
    if kind == "constant":
        return make_constant_field(float(body), bound_C)
    if kind == "table":
        values = [float(v) for v in body.split(",") if v.strip()]
        return make_table_field(list(enumerate(values, start=1)), bound_C, fill="periodic")
    if kind in ("expr", "expression"):
        return make_expression_field(body, bound_C)
    raise ValueError(f"cannot parse field {text!r}; expected constant:, table: or expr:")


@dataclass
class DiagonalLimits:
    """Diagonal limits ``alpha*_m = lim_k alpha_(k, k+m)`` of a field.

    Exact when the field knows its limits; otherwise each requested offset
    is extrapolated from ``k_max`` diagonal samples with a geometric tail.
    ``tail_estimate_error`` is the largest tail correction applied so far.
    """

    field: AlphaField
    k_max: int = 64
    tol: float = 1e-12
    tail_estimate_error: float = 0.0
    _cache: np.ndarray = dc_field(default_factory=lambda: np.zeros(1), repr=False)

    def star(self, m: int) -> float:
        return float(self.star_array(m)[m])

    def star_array(self, m_max: int) -> np.ndarray:
        """``alpha*_0 .. alpha*_{m_max}`` as an array."""
        if m_max + 1 > self._cache.size:
            self._cache = self._compute(np.arange(m_max + 1))
        return self._cache[: m_max + 1]

    def _compute(self, m: np.ndarray) -> np.ndarray:
        if self.field.exact_star is not None:
            out = np.asarray(self.field.exact_star(m), dtype=float).copy()
            out[m == 0] = 0.0
            return out
        out = np.zeros(m.size)
        chunk = max(1, 2_000_000 // self.k_max)
        for lo in range(1, m.size, chunk):
            mm = m[lo : lo + chunk]
            out[lo : lo + chunk] = self._extrapolate(mm)
        return out

    def _extrapolate(self, m: np.ndarray) -> np.ndarray:
        s = np.arange(1, self.k_max + 1)
        samples = self.field.evaluate_many(s[None, :], s[None, :] + m[:, None])
        d = np.diff(samples, axis=1)
        last, prev = d[:, -1], d[:, -2]
        settled = np.abs(last) <= self.tol
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(prev != 0.0, last / prev, 0.0)
        tail_ratios = np.abs(d[:, -3:]) / np.where(np.abs(d[:, -4:-1]) > 0, np.abs(d[:, -4:-1]), np.inf)
        stuck = ~settled & np.all(tail_ratios >= 1.0, axis=1)
        if np.any(stuck):
            bad = int(m[np.flatnonzero(stuck)[0]])
            raise DiagonalConvergenceError(
                f"diagonal differences along offset m={bad} do not contract "
                f"(last |d| = {abs(last[np.flatnonzero(stuck)[0]]):.3g})"
            )
        tail = np.where(settled | (np.abs(ratio) >= 1.0), 0.0, last * ratio / (1.0 - ratio))
        self.tail_estimate_error = max(self.tail_estimate_error, float(np.max(np.abs(tail), initial=0.0)))
        return samples[:, -1] + tail


def diagonal_limits(field: AlphaField, k_max: int = 64, tol: float = 1e-12) -> DiagonalLimits:
    if k_max < 5:
        raise ValueError("k_max must be at least 5 to measure a contraction ratio")
    return DiagonalLimits(field, k_max, tol)


@dataclass(frozen=True)
class Violation:
    kind: str  # "bound" or "contraction"
    pair: tuple[int, int]
    value: float
    limit: float

    def as_dict(self) -> dict:
        return {"kind": self.kind, "i": self.pair[0], "j": self.pair[1], "value": self.value, "limit": self.limit}


def validate_field(
    field: AlphaField, rank_max: int, n0: int = 4, gamma: float | None = None
) -> list[Violation]:
    """Exhaustively check the bound and the diagonal contraction on ranks ``<= rank_max``.

    The contraction check needs a ratio ``gamma``; it falls back to the
    field's own ``contraction_gamma`` and is skipped when neither is given.
    """
    if rank_max < 2:
        raise ValueError("rank_max must be >= 2")
    st = wedge_states(rank_max)
    i, j = st[:, 0], st[:, 1]
    values = field.evaluate_many(i, j, check=False)
    limits = field.bound(i, j)
    live = (i > 0) & (i != j)
    out = [
        Violation("bound", (int(a), int(b)), float(v), float(lim))
        for a, b, v, lim, ok in zip(i, j, values, limits, live)
        if ok and not abs(v) < lim
    ]
    gamma = field.contraction_gamma if gamma is None else gamma
    if gamma is not None:
        sel = (i >= 2) & (i < j) & (i + j > n0)
        ii, jj = i[sel], j[sel]
        here = field.evaluate_many(ii, jj, check=False)
        fwd = field.evaluate_many(ii + 1, jj + 1, check=False)
        back = field.evaluate_many(ii - 1, jj - 1, check=False)
        lhs = np.abs(fwd - here)
        rhs = gamma * np.abs(here - back)
        # relative slack for rounding in equal differences
        bad = lhs > rhs * (1 + 1e-12) + 1e-15
        out.extend(
            Violation("contraction", (int(a), int(b)), float(x), float(y))
            for a, b, x, y in zip(ii[bad], jj[bad], lhs[bad], rhs[bad])
        )
    return out

