"""The classification constant kappa(a) and the recurrence verdict built on it.

Both the product sequence and its Cesaro average are evaluated in the log
domain.  For a constant field the factors are ``1 + 8a/k`` (the last one
``1 + 6a/k``), so the product tends to ``exp(8a)`` while the Cesaro average
tends to ``(exp(8a) - 1) / (8a)``; the two agree on which side of 1 they
fall, which is all the verdict needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from enum import Enum
from typing import Sequence

import numpy as np

from reflwalk.alpha import AlphaField, DiagonalLimits, diagonal_limits

DEFAULT_SCHEDULE = (10**3, 10**4, 10**5, 10**6)
# absolute slack below which kappa counts as exactly 1 (rounding only)
ROUNDING_SLACK = 1e-12
MIN_MARGIN = 1e-6


class KappaDomainError(ArithmeticError):
    pass


class KappaMode(str, Enum):
    CESARO = "CesaroAverage"
    PRODUCT = "ProductLimit"
    CLOSED = "ClosedForm"


class Verdict(str, Enum):
    RECURRENT = "Recurrent"
    TRANSIENT = "Transient"
    MARGINAL = "Marginal"


def _log_factors(limits: DiagonalLimits, k: int) -> np.ndarray:
    """``log`` of the ``k - 1`` factors, ordered ``i = 1 .. k-1``."""
    star = limits.star_array(2 * k)
    m = np.arange(2 * k - 2, 0, -2)  # 2k - 2i for i = 1..k-1
    terms = (2.0 * star[m] + 4.0 * star[m - 1] + 2.0 * star[m - 2]) / k
    if np.any(terms <= -1.0):
        bad = int(np.flatnonzero(terms <= -1.0)[0]) + 1
        raise KappaDomainError(f"factor i={bad} is not positive at k={k}; k is too small for this field")
    return np.log1p(terms)


def kappa_product(limits: DiagonalLimits, k: int) -> float:
    """The ``k``-th product ``prod_{i<k} (1 + (2a*_{2k-2i} + 4a*_{2k-2i-1} + 2a*_{2k-2i-2}) / k)``."""
    if k < 2:
        raise ValueError("k must be >= 2")
    return math.exp(math.fsum(_log_factors(limits, k)))


def kappa_cesaro(limits: DiagonalLimits, k: int) -> float:
    """Average over ``j = 1 .. k-1`` of the partial products, divided by ``k``."""
    if k < 3:
        raise ValueError("k must be >= 3")
    partial = np.exp(np.cumsum(_log_factors(limits, k)))
    return math.fsum(partial) / k


def kappa_direct(limits: DiagonalLimits, k: int) -> float:
    """Plain multiplication of the factors; the reference for small ``k``."""
    star = limits.star_array(2 * k)
    out = 1.0
    for i in range(1, k):
        out *= 1.0 + (2.0 * star[2 * k - 2 * i] + 4.0 * star[2 * k - 2 * i - 1] + 2.0 * star[2 * k - 2 * i - 2]) / k
    return out


def richardson(k1: int, v1: float, k2: int, v2: float) -> float:
    """Eliminate the ``1/k`` term from two refinements."""
    return (k2 * v2 - k1 * v1) / (k2 - k1)


@dataclass
class KappaEstimate:
    value: float
    mode: KappaMode
    k_used: int
    convergence_gap: float


@dataclass
class ClassificationReport:
    kappa: KappaEstimate
    verdict: Verdict
    psi_index: float
    psi_literal: float
    notes: str
    diagnostics: dict = dc_field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kappa": self.kappa.value,
            "mode": self.kappa.mode.value,
            "k_used": self.kappa.k_used,
            "convergence_gap": self.kappa.convergence_gap,
            "verdict": self.verdict.value,
            "psi_index": self.psi_index,
            "psi_literal": self.psi_literal,
            "notes": self.notes,
            "diagnostics": self.diagnostics,
        }


def decide(value: float, gap: float) -> Verdict:
    """Recurrent when even ``value + 3 gap`` stays at 1 or below; Transient when
    ``value`` clears 1 by more than ``max(3 gap, 1e-6)``; Marginal in between."""
    if value + 3.0 * gap <= 1.0 + ROUNDING_SLACK:
        return Verdict.RECURRENT
    if value - max(3.0 * gap, MIN_MARGIN) > 1.0:
        return Verdict.TRANSIENT
    return Verdict.MARGINAL


def _extrapolate(ks: Sequence[int], values: Sequence[float]) -> tuple[float, float]:
    """Richardson value from the last two points and the gap to the previous estimate."""
    if len(ks) == 1:
        return values[0], float("inf")
    est = [richardson(ks[n - 1], values[n - 1], ks[n], values[n]) for n in range(1, len(ks))]
    if len(est) == 1:
        return est[0], abs(est[0] - values[-1])
    return est[-1], abs(est[-1] - est[-2])


_NOTE = (
    "psi_index = ln(kappa) makes a constant field an exp(8a)-walk; "
    "psi_literal = kappa is the alternative reading in which the index itself equals kappa. "
    "The two readings disagree and are both reported."
)


def classify(
    field: AlphaField,
    k_schedule: Sequence[int] = DEFAULT_SCHEDULE,
    mode: str = "auto",
    limits: DiagonalLimits | None = None,
    product_tol: float = 1e-6,
) -> ClassificationReport:
    """Evaluate kappa along ``k_schedule``, extrapolate and apply the margin rule.

    ``mode`` is ``"auto"`` (product when its refinements settle within
    ``product_tol``, otherwise the Cesaro average), ``"product"``,
    ``"cesaro"`` or ``"closed"`` (constant fields only).
    """
    ks = [int(k) for k in k_schedule]
    if not ks or any(k < 3 for k in ks) or any(b <= a for a, b in zip(ks, ks[1:])):
        raise ValueError("k_schedule must be increasing integers >= 3")
    limits = limits or diagonal_limits(field)
    prod = [kappa_product(limits, k) for k in ks]
    ces = [kappa_cesaro(limits, k) for k in ks]
    p_val, p_gap = _extrapolate(ks, prod)
    c_val, c_gap = _extrapolate(ks, ces)
    diagnostics = {
        "k_schedule": ks,
        "product": prod,
        "cesaro": ces,
        "product_extrapolated": p_val,
        "cesaro_extrapolated": c_val,
        "product_gap": p_gap,
        "cesaro_gap": c_gap,
        "tail_estimate_error": limits.tail_estimate_error,
    }
    closed = None
    if field.kind == "constant":
        closed = math.exp(8.0 * field.spec["alpha"])
        diagnostics["closed_form"] = closed

    if mode == "closed":
        if closed is None:
            raise ValueError("closed form exists only for constant fields")
        est = KappaEstimate(closed, KappaMode.CLOSED, ks[-1], 0.0)
    elif mode == "product" or (mode == "auto" and p_gap <= product_tol * max(1.0, abs(p_val))):
        est = KappaEstimate(p_val, KappaMode.PRODUCT, ks[-1], p_gap)
    elif mode in ("cesaro", "auto"):
        est = KappaEstimate(c_val, KappaMode.CESARO, ks[-1], c_gap)
    else:
        raise ValueError(f"unknown mode {mode!r}")

    notes = _NOTE
    if est.value <= 0 or not math.isfinite(est.value):
        verdict = Verdict.MARGINAL
        notes += " Extrapolated kappa is not a positive finite number; no verdict."
        psi = float("nan")
    else:
        verdict = decide(est.value, est.convergence_gap)
        psi = math.log(est.value)
    if verdict is Verdict.MARGINAL:
        notes += f" Marginal: |kappa - 1| = {abs(est.value - 1):.3g} is within the margin set by gap {est.convergence_gap:.3g}."
    return ClassificationReport(est, verdict, psi, est.value, notes, diagnostics)
