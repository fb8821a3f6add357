"""Birth-death chains: the series criterion, the iterated-logarithm test and the
threshold form for the one-dimensional drifted walk.

A chain with birth rates ``lambda_n`` and death rates ``mu_n`` is recurrent iff
``sum_n prod_{k<=n} mu_k / lambda_k`` diverges.  Every check here is made on
a finite window of ``n`` and says so in its evidence string; none of them is
a proof about the tail beyond the window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from enum import Enum
from typing import Callable

import numpy as np

from reflwalk._expr import Expression

DEFAULT_WINDOW = (10**3, 10**6)
DEFAULT_K_MAX = 3
C_MARGIN = 0.01
# slack allowed when a ratio sits exactly on the recurrence boundary
BOUNDARY_RTOL = 1e-12
ESCALATION_BAND = 0.05

Vec = Callable[[np.ndarray], np.ndarray]


class BDVerdictKind(str, Enum):
    RECURRENT = "Recurrent"
    TRANSIENT = "Transient"
    INCONCLUSIVE = "Inconclusive"


class IteratedLogDomainError(ValueError):
    pass


@dataclass(frozen=True)
class RateSequence:
    """Birth and death rates as vectorised functions of ``n >= 1``.

    ``ratio_fn``, when given, returns ``lambda_n / mu_n`` directly and is
    used in place of the quotient.
    """

    lam: Vec
    mu: Vec
    description: str = ""
    ratio_fn: Vec | None = dc_field(default=None, compare=False)

    def ratio(self, n: np.ndarray) -> np.ndarray:
        n = np.asarray(n, dtype=float)
        if self.ratio_fn is not None:
            return np.broadcast_to(np.asarray(self.ratio_fn(n), dtype=float), n.shape)
        return np.asarray(self.lam(n), dtype=float) / np.asarray(self.mu(n), dtype=float)

    def log_mu_over_lam(self, n: np.ndarray) -> np.ndarray:
        n = np.asarray(n, dtype=float)
        if self.ratio_fn is not None:
            return -np.log(self.ratio(n))
        lam = np.broadcast_to(np.asarray(self.lam(n), dtype=float), n.shape)
        mu = np.broadcast_to(np.asarray(self.mu(n), dtype=float), n.shape)
        if np.any(lam <= 0) or np.any(mu <= 0):
            k = int(np.flatnonzero((lam <= 0) | (mu <= 0))[0])
            raise ValueError(f"rates must be positive; n={int(n[k])} gives lambda={lam[k]}, mu={mu[k]}")
        return np.log(mu) - np.log(lam)


def rates_from_ratio(ratio: str | Vec, description: str | None = None) -> RateSequence:
    """Rates with ``mu_n = 1`` and ``lambda_n`` equal to the given ratio (an expression in ``n``)."""
    if isinstance(ratio, str):
        expr = Expression(ratio, ["n"])
        fn: Vec = lambda n: expr(n=n)  # noqa: E731
        description = description or f"lambda/mu = {ratio}"
    else:
        fn = ratio
    return RateSequence(fn, lambda n: np.ones_like(n, dtype=float), description or "ratio", fn)


def bd22_rates() -> RateSequence:
    """Reference chain of the simple walk's norm: ``lambda_n = 8n + 4``, ``mu_n = 8n - 4``."""
    return RateSequence(lambda n: 8.0 * n + 4.0, lambda n: 8.0 * n - 4.0, "BD(2,2): 8n+4 / 8n-4")


def drifted_walk_rates(alpha_seq: Vec) -> RateSequence:
    """One-dimensional walk with up-probability ``1/2 + alpha_n / n``."""
    return RateSequence(
        lambda n: 0.5 + alpha_seq(n) / n,
        lambda n: 0.5 - alpha_seq(n) / n,
        "lambda = 1/2 + alpha_n/n, mu = 1/2 - alpha_n/n",
    )


def iterated_log(x, K: int):
    """``ln`` applied ``K`` times; raises if any intermediate argument is not positive."""
    if K < 1:
        raise ValueError("K must be >= 1")
    scalar = np.isscalar(x)
    v = np.asarray(x, dtype=float)
    for _ in range(K):
        if np.any(v <= 0):
            raise IteratedLogDomainError(f"ln_({K}) is undefined here: an intermediate value is {np.min(v):.6g}")
        v = np.log(v)
    return float(v) if scalar else v


def log_products(ns: np.ndarray, K: int) -> np.ndarray:
    """Rows ``k = 1..K`` of ``prod_{j<=k} ln_(j) n``."""
    out = np.empty((K, ns.size))
    acc = np.ones(ns.size)
    v = ns.astype(float)
    for k in range(K):
        if np.any(v <= 0):
            raise IteratedLogDomainError(f"ln_({k + 1}) undefined at n={int(ns[np.argmin(v)])}")
        v = np.log(v)
        acc = acc * v
        out[k] = acc
    return out


def domain_threshold(K: int) -> float:
    """Smallest ``x`` with ``ln_(K) x > 0`` (``1, e, e^e, e^e^e, ...``)."""
    t = 1.0
    for _ in range(K - 1):
        t = math.exp(t)
    return t


@dataclass
class PartialSums:
    n: np.ndarray
    log_terms: np.ndarray  # log prod_{k<=n} mu_k/lambda_k
    log_sums: np.ndarray  # log of the partial sums

    @property
    def sums(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.log_sums)


def series_partial_sums(rates: RateSequence, n_terms: int, start: int = 1) -> PartialSums:
    """Partial sums of ``sum_{m=start}^{n} prod_{k=start}^{m} mu_k/lambda_k``, all in the log domain."""
    if n_terms < 1:
        raise ValueError("n_terms must be >= 1")
    n = np.arange(start, start + n_terms, dtype=np.int64)
    log_terms = np.cumsum(rates.log_mu_over_lam(n.astype(float)))
    return PartialSums(n, log_terms, np.logaddexp.accumulate(log_terms))


def direct_partial_sums(rates: RateSequence, n_terms: int, start: int = 1) -> np.ndarray:
    """Plain running products and sums; the reference for the log-domain version."""
    out = np.empty(n_terms)
    prod, total = 1.0, 0.0
    for k in range(n_terms):
        n = float(start + k)
        prod *= float(rates.mu(np.array([n]))[0]) / float(rates.lam(np.array([n]))[0])
        total += prod
        out[k] = total
    return out


@dataclass
class SeriesDiagnosis:
    tail_exponent: float  # beta in log term ~ beta * ln n
    verdict: BDVerdictKind
    escalated: bool
    evidence: str


def diagnose_series(rates: RateSequence, n_terms: int = 10**6, start: int = 1) -> SeriesDiagnosis:
    """Fit the log partial product to ``beta * ln n`` over the top decade of terms.

    ``beta >= -1`` reads as divergent (recurrent), ``beta < -1`` as convergent
    (transient).  Within ``0.05`` of ``-1`` the fit cannot decide and the
    iterated-logarithm test is run instead.
    """
    ps = series_partial_sums(rates, n_terms, start)
    top = ps.n >= max(start, ps.n[-1] // 10)
    beta = float(np.polyfit(np.log(ps.n[top].astype(float)), ps.log_terms[top], 1)[0])
    window = (int(ps.n[top][0]), int(ps.n[-1]))
    if abs(beta + 1.0) < ESCALATION_BAND:
        lo = max(window[0], int(math.ceil(domain_threshold(DEFAULT_K_MAX))) + 1)
        bt = bertrand_test(rates, DEFAULT_K_MAX, (lo, window[1]))
        return SeriesDiagnosis(beta, bt.verdict, True, f"tail exponent {beta:.4f} is within 0.05 of -1; {bt.evidence}")
    verdict = BDVerdictKind.RECURRENT if beta >= -1.0 else BDVerdictKind.TRANSIENT
    return SeriesDiagnosis(
        beta, verdict, False, f"log partial product ~ {beta:.4f} ln n on n in [{window[0]}, {window[1]}]"
    )


def log_growth_slope(rates: RateSequence, n_lo: int, n_hi: int, start: int = 1) -> tuple[float, float]:
    """Least-squares slope of the partial sum against ``ln n`` on ``[n_lo, n_hi]``.

    Also returns the slope of ``ln S_n`` against ``ln ln n``, which is 1 for
    any sum growing like a constant times ``ln n``.
    """
    ps = series_partial_sums(rates, n_hi - start + 1, start)
    sel = ps.n >= n_lo
    ln_n = np.log(ps.n[sel].astype(float))
    slope = float(np.polyfit(ln_n, ps.sums[sel], 1)[0])
    loglog = float(np.polyfit(np.log(ln_n), ps.log_sums[sel], 1)[0])
    return slope, loglog


@dataclass
class BDVerdict:
    verdict: BDVerdictKind
    method: str
    K_used: int
    c_fitted: float | None
    window: tuple[int, int]
    evidence: str
    extra: dict = dc_field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "verdict": self.verdict.value,
            "method": self.method,
            "K_used": self.K_used,
            "c_fitted": self.c_fitted,
            "window": list(self.window),
            "evidence": self.evidence,
        }
        out.update(self.extra)
        return out


def _threshold_check(
    excess: np.ndarray, rounding: np.ndarray, ns: np.ndarray, K_max: int, window, method: str, what: str
) -> BDVerdict:
    """Shared core: ``excess = (ratio - 1) n - 1`` (or ``4 alpha_n - 1``) against the iterated-log ladder.

    ``rounding`` bounds the floating-point error already present in ``excess``.
    """
    prods = log_products(ns, K_max)
    inv = 1.0 / prods
    best_c = None
    for K in range(1, K_max + 1):
        lower = inv[: K - 1].sum(axis=0)
        c = float(np.min((excess - lower) * prods[K - 1]))
        best_c = c if best_c is None else best_c
        if c > 1.0 + C_MARGIN:
            return BDVerdict(
                BDVerdictKind.TRANSIENT, method, K, c, window,
                f"{what} clears the transience threshold with c = {c:.6g} at K={K}, n_0 = {window[0]} on window",
            )
        bound = inv[:K].sum(axis=0)
        slack = BOUNDARY_RTOL * bound + rounding
        if np.all(excess <= bound + slack):
            return BDVerdict(
                BDVerdictKind.RECURRENT, method, K, c, window,
                f"{what} stays under the recurrence threshold at K={K}, n_0 = {window[0]} on window",
            )
    return BDVerdict(
        BDVerdictKind.INCONCLUSIVE, method, K_max, best_c, window,
        f"neither threshold holds uniformly for K <= {K_max} on window",
    )


def _window(n_window, K_max) -> tuple[np.ndarray, tuple[int, int]]:
    lo, hi = int(n_window[0]), int(n_window[1])
    if hi <= lo:
        raise ValueError("window must have n_lo < n_hi")
    if lo <= domain_threshold(K_max):
        raise IteratedLogDomainError(f"n_lo={lo} is below the ln_({K_max}) threshold {domain_threshold(K_max):.6g}")
    return np.arange(lo, hi + 1, dtype=np.int64), (lo, hi)


def bertrand_test(rates: RateSequence, K_max: int = DEFAULT_K_MAX, n_window=DEFAULT_WINDOW) -> BDVerdict:
    """Check the iterated-logarithm thresholds for ``lambda_n / mu_n`` on every ``n`` in the window.

    For ``K = 1 .. K_max`` the transience branch needs
    ``ratio >= 1 + 1/n + sum_{k<K} 1/(n L_k) + c/(n L_K)`` with ``c > 1.01``,
    where ``L_k = prod_{j<=k} ln_(j) n``; the recurrence branch needs
    ``ratio <= 1 + 1/n + sum_{k<=K} 1/(n L_k)``.  The first ``K`` at which
    either holds decides.
    """
    ns, window = _window(n_window, K_max)
    ratio = rates.ratio(ns)
    excess = (ratio - 1.0) * ns - 1.0
    # one rounding of the ratio near 1 is amplified by n
    rounding = 4.0 * np.finfo(float).eps * ns * np.maximum(1.0, np.abs(ratio))
    return _threshold_check(excess, rounding, ns, K_max, window, "BertrandTest", "ratio")


def proposition1_classify(
    alpha_seq: Vec, K_max: int = DEFAULT_K_MAX, n_window=DEFAULT_WINDOW, bound_C: float = 1.0
) -> BDVerdict:
    """Apply the thresholds on ``alpha_n`` directly and cross-check the induced rates.

    ``alpha_n >= (1/4)(1 + sum_{i<K} 1/L_i + c/L_K)`` with ``c > 1.01`` is
    transient; ``alpha_n <= (1/4)(1 + sum_{i<=K} 1/L_i)`` is recurrent.
    The same window is then run through :func:`bertrand_test` with
    ``lambda_n = 1/2 + alpha_n/n``, ``mu_n = 1/2 - alpha_n/n``.
    """
    ns, window = _window(n_window, K_max)
    a = np.broadcast_to(np.asarray(alpha_seq(ns.astype(float)), dtype=float), ns.shape)
    limit = np.minimum(bound_C, ns / 2.0)
    if np.any(a <= 0) or np.any(a >= limit):
        k = int(np.flatnonzero((a <= 0) | (a >= limit))[0])
        raise ValueError(f"alpha_n must lie in (0, min(C, n/2)); n={int(ns[k])} gives {a[k]}")
    rounding = 8.0 * np.finfo(float).eps * np.maximum(1.0, a)
    out = _threshold_check(4.0 * a - 1.0, rounding, ns, K_max, window, "BertrandTest", "4 alpha_n")
    cross = bertrand_test(drifted_walk_rates(alpha_seq), K_max, window)
    conclusive = {BDVerdictKind.RECURRENT, BDVerdictKind.TRANSIENT}
    contradicts = out.verdict in conclusive and cross.verdict in conclusive and out.verdict != cross.verdict
    out.extra = {"cross_check": cross.verdict.value, "cross_check_K": cross.K_used, "contradiction": contradicts}
    return out
