"""Closed-form analytics for the branching-process view of device-based tracing.

An unimpeded infection cluster either dies out on its own or grows without
bound.  Everything here follows from that dichotomy: the extinction split
(pi0, pi1) of the offspring process, the chance that a cluster of size k
surfaces at least one severe case, the effective reproduction ratio once
traced clusters are removed, and a lower/upper bracket on the minimum
recorder adoption rate that pushes the effective ratio below one.

All functions are pure and operate on plain value types; they are safe to
call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "DiseaseParams",
    "OffspringDistribution",
    "ExtinctionResult",
    "AdoptionBounds",
    "solve_extinction",
    "mu_k",
    "upper_bound",
    "lower_bound",
    "adoption_bounds",
    "effective_r",
    "analytic_px0_bracket",
    "finite_cluster_trace_ratio",
    "sweep_upper_bound",
    "bounds_table",
    "bounds_table_csv",
    "sweep_csv",
    "extinction_table_csv",
]

# Root refinement target for the extinction equation and the floor of the
# bisection bracket.  The root always lies in (0, 1/r0), so the floor only
# needs to be above zero.
ROOT_RESIDUAL_TOL = 1e-12
_BISECT_FLOOR = 1e-15


@dataclass(frozen=True)
class DiseaseParams:
    """Disease-level inputs: basic reproduction ratio and severity probability.

    ``epsilon`` is always the reciprocal of ``r0``; it is recomputed on
    access so it can never drift out of sync.
    """

    r0: float
    nu: float

    def __post_init__(self) -> None:
        if not self.r0 > 1.0:
            raise ValueError(
                f"supercritical regime required: r0 must exceed 1, got {self.r0}"
            )
        if not 0.0 < self.nu < 1.0:
            raise ValueError(f"nu must lie strictly inside (0, 1), got {self.nu}")

    @property
    def epsilon(self) -> float:
        return 1.0 / self.r0


@dataclass(frozen=True)
class OffspringDistribution:
    """Distribution of direct infections caused by one patient.

    Two kinds are supported. ``poisson`` is the production model, with the
    mean tied to the basic reproduction ratio.  ``deterministic`` produces a
    fixed offspring count and exists so Monte Carlo tests can use clusters
    with hand-computable outcomes; it is rejected by the analytic solver.
    """

    kind: str
    mean: float | None = None
    count: int | None = None

    POISSON = "poisson"
    DETERMINISTIC = "deterministic"

    def __post_init__(self) -> None:
        if self.kind == self.POISSON:
            if self.mean is None or not self.mean > 0.0:
                raise ValueError("poisson offspring needs a positive mean")
            if self.count is not None:
                raise ValueError("poisson offspring takes no count")
        elif self.kind == self.DETERMINISTIC:
            if self.count is None or self.count < 0:
                raise ValueError("deterministic offspring needs a count >= 0")
            if self.mean is not None:
                raise ValueError("deterministic offspring takes no mean")
        else:
            raise ValueError(f"unknown offspring kind {self.kind!r}")

    @classmethod
    def poisson(cls, mean: float) -> "OffspringDistribution":
        return cls(kind=cls.POISSON, mean=mean)

    @classmethod
    def deterministic(cls, count: int) -> "OffspringDistribution":
        return cls(kind=cls.DETERMINISTIC, count=count)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw ``n`` offspring counts. Deterministic kind consumes no randomness."""
        if self.kind == self.POISSON:
            return rng.poisson(self.mean, n)
        return np.full(n, self.count, dtype=np.int64)


@dataclass(frozen=True)
class ExtinctionResult:
    """Extinction/growth split for one offspring distribution.

    ``pi0`` is the chance an unimpeded cluster eventually stops growing,
    ``pi1 = 1 - pi0`` the chance it grows without bound.  ``r0`` records the
    reproduction ratio the result was solved for, so downstream consumers
    can detect mismatched inputs.
    """

    pi0: float
    pi1: float
    r0: float

    def __post_init__(self) -> None:
        if not 0.0 < self.pi0 < 1.0 or not 0.0 < self.pi1 < 1.0:
            raise ValueError("pi0 and pi1 must lie strictly inside (0, 1)")
        if abs(self.pi0 + self.pi1 - 1.0) > 1e-12:
            raise ValueError("pi0 + pi1 must equal 1 within 1e-12")


@dataclass(frozen=True)
class AdoptionBounds:
    """Bracket [p_lower, p_upper] around the minimum required adoption rate."""

    p_lower: float
    p_upper: float

    def __post_init__(self) -> None:
        if not self.p_lower <= self.p_upper:
            raise ValueError("p_lower must not exceed p_upper")
        if not (0.0 < self.p_lower < 1.0 and 0.0 < self.p_upper < 1.0):
            raise ValueError("bounds must lie strictly inside (0, 1)")


def _extinction_objective(x: float, r0: float) -> float:
    return math.log(x) - r0 * (x - 1.0)


def solve_extinction(dist: OffspringDistribution) -> ExtinctionResult:
    """Solve for the extinction probability of a Poisson offspring process.

    The root of ``log x = r0 (x - 1)`` below 1 is unique and lies inside
    (0, 1/r0); bisection on (1e-15, 1/r0) is therefore guaranteed to
    converge.  The root is refined until the equation residual is at most
    ``ROOT_RESIDUAL_TOL``.

    Deterministic offspring kinds are rejected: their cluster behaviour is
    exercised through Monte Carlo only, never through this solver.
    """
    if dist.kind != OffspringDistribution.POISSON:
        raise ValueError("extinction solver accepts poisson offspring only")
    r0 = float(dist.mean)
    if not r0 > 1.0:
        raise ValueError(f"supercritical regime required: r0 must exceed 1, got {r0}")

    lo, hi = _BISECT_FLOOR, 1.0 / r0
    f_lo = _extinction_objective(lo, r0)
    # f(1/r0) = r0 - 1 - log(r0) > 0 for every r0 > 1, so the root is bracketed.
    root = None
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        f_mid = _extinction_objective(mid, r0)
        if abs(f_mid) <= ROOT_RESIDUAL_TOL:
            root = mid
            break
        if (f_mid < 0.0) == (f_lo < 0.0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    if root is None:
        root = min((lo, hi), key=lambda x: abs(_extinction_objective(x, r0)))
        if abs(_extinction_objective(root, r0)) > ROOT_RESIDUAL_TOL:
            raise ArithmeticError(
                f"extinction root did not converge for r0={r0}"
            )
    return ExtinctionResult(pi0=root, pi1=1.0 - root, r0=r0)


def mu_k(nu: float, k: int) -> float:
    """Probability that a cluster of size ``k`` surfaces at least one severe case.

    Equals ``1 - (1 - nu)**k``; strictly increasing in ``k`` and tending to 1.
    """
    if not 0.0 < nu < 1.0:
        raise ValueError(f"nu must lie strictly inside (0, 1), got {nu}")
    if k < 1:
        raise ValueError("cluster size must be at least 1 (the cluster has its root)")
    return 1.0 - (1.0 - nu) ** k


def upper_bound(params: DiseaseParams, nu: float | None = None) -> float:
    """Upper bound on the minimum required adoption rate.

    ``1 / (1 + eps * nu / (1 - eps))`` with ``eps = 1/r0``.  The bound does
    not depend on the offspring distribution, so it remains valid even when
    the distribution is unknown.

    ``nu`` optionally overrides ``params.nu`` and, unlike the params type,
    admits the closed boundary ``nu = 1`` (where the bound collapses to
    ``1 - eps``); this relaxation exists for boundary checks only.
    """
    if nu is None:
        nu = params.nu
    elif not 0.0 < nu <= 1.0:
        raise ValueError(f"nu override must lie in (0, 1], got {nu}")
    eps = params.epsilon
    return 1.0 / (1.0 + eps * nu / (1.0 - eps))


def _lower_bound_quadratic(p: float, params: DiseaseParams, ext: ExtinctionResult) -> float:
    eps = params.epsilon
    nu = params.nu
    a = ext.pi0 * (1.0 - nu)
    b = ext.pi0 + ext.pi1 * nu + (1.0 - eps) * (1.0 - nu)
    c = 1.0 - eps
    return a * p * p - b * p + c


def lower_bound(params: DiseaseParams, ext: ExtinctionResult) -> float:
    """Lower bound on the minimum required adoption rate.

    The sub-1 root of the quadratic
    ``pi0 (1-nu) p^2 - (pi0 + pi1 nu + (1-eps)(1-nu)) p + (1-eps)``.
    The quadratic evaluates to ``-eps * nu`` at ``p = 1``, which is negative,
    so one root lies above 1 and one below; the smaller root is returned.
    """
    if ext.r0 != params.r0:
        raise ValueError(
            f"extinction result solved for r0={ext.r0} but params carry r0={params.r0}"
        )
    eps = params.epsilon
    nu = params.nu
    a = ext.pi0 * (1.0 - nu)
    b = ext.pi0 + ext.pi1 * nu + (1.0 - eps) * (1.0 - nu)
    c = 1.0 - eps
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        raise ArithmeticError(
            "negative discriminant: extinction result inconsistent with params"
        )
    at_one = _lower_bound_quadratic(1.0, params, ext)
    if abs(at_one + eps * nu) > 1e-12:
        raise ArithmeticError("quadratic sanity check failed at p=1")
    return (b - math.sqrt(disc)) / (2.0 * a)


def adoption_bounds(params: DiseaseParams) -> AdoptionBounds:
    """Bracket the minimum required adoption rate for Poisson offspring."""
    ext = solve_extinction(OffspringDistribution.poisson(params.r0))
    return AdoptionBounds(
        p_lower=lower_bound(params, ext),
        p_upper=upper_bound(params),
    )


def effective_r(params: DiseaseParams, prob_x0: float) -> float:
    """Effective reproduction ratio ``r0 * (1 - P(child's cluster fully traced))``."""
    if not 0.0 <= prob_x0 <= 1.0:
        raise ValueError(f"prob_x0 must be a probability, got {prob_x0}")
    return params.r0 * (1.0 - prob_x0)


def analytic_px0_bracket(
    params: DiseaseParams, ext: ExtinctionResult, p: float
) -> tuple[float, float]:
    """Closed-form sandwich for the full-trace probability at adoption rate ``p``.

    low  = nu*p / (1 - p*(1-nu))
    high = p*pi0 + pi1 * nu*p / (1 - p*(1-nu))

    Both ends are probabilities and low <= high for p <= 1 (they coincide at
    p = 1, where low reaches 1).  Monte Carlo estimates of P(X=0) under the
    surveilled detection model are sandwiched by this bracket.
    """
    if not 0.0 < p <= 1.0:
        raise ValueError(f"adoption rate must lie in (0, 1], got {p}")
    nu = params.nu
    geometric = nu * p / (1.0 - p * (1.0 - nu))
    # Clamp away one-ulp excursions at the p=1 saturation point.
    low = min(max(geometric, 0.0), 1.0)
    high = min(max(p * ext.pi0 + ext.pi1 * geometric, low), 1.0)
    return low, high


def finite_cluster_trace_ratio(
    p: float, nu: float, k: int | np.ndarray
) -> float | np.ndarray:
    """Weight ``(1 - (p(1-nu))**k) / (1 - (1-nu)**k)`` of a size-k cluster.

    This is the factor by which a finite cluster's full-trace chance exceeds
    the geometric tail value; it is decreasing in k, maximal at k=1 where it
    equals ``(1 - p(1-nu)) / nu``, and tends to 1.  Accepts a scalar or an
    integer array for k.
    """
    k_arr = np.asarray(k)
    if np.any(k_arr < 1):
        raise ValueError("cluster size must be at least 1")
    num = 1.0 - (p * (1.0 - nu)) ** k_arr
    den = 1.0 - (1.0 - nu) ** k_arr
    out = num / den
    return float(out) if np.isscalar(k) else out


def sweep_upper_bound(
    r0_list: Iterable[float], nu_grid: Iterable[float]
) -> list[tuple[float, float, float]]:
    """Evaluate the adoption upper bound over a (r0, nu) grid.

    Rows come back ordered by (r0, nu).  At every nu the bound increases
    with r0, so the per-r0 curves stack bottom-to-top in r0 order, and each
    curve decreases strictly in nu.
    """
    r0s = sorted(float(r) for r in r0_list)
    nus = sorted(float(n) for n in nu_grid)
    if not r0s or not nus:
        raise ValueError("r0 list and nu grid must be nonempty")
    rows = []
    for r0 in r0s:
        params_probe = DiseaseParams(r0=r0, nu=nus[0])  # validates r0 and first nu
        for nu in nus:
            if not 0.0 < nu < 1.0:
                raise ValueError(f"nu must lie strictly inside (0, 1), got {nu}")
            rows.append((r0, nu, upper_bound(params_probe, nu=nu)))
    return rows


def bounds_table(
    r0_list: Iterable[float], nu_list: Iterable[float]
) -> list[tuple[float, float, float, float]]:
    """Rows (r0, nu, p_lower, p_upper) ordered by (r0, nu)."""
    r0s = sorted(float(r) for r in r0_list)
    nus = sorted(float(n) for n in nu_list)
    if not r0s or not nus:
        raise ValueError("r0 list and nu list must be nonempty")
    rows = []
    for r0 in r0s:
        ext = solve_extinction(OffspringDistribution.poisson(r0))
        for nu in nus:
            params = DiseaseParams(r0=r0, nu=nu)
            rows.append((r0, nu, lower_bound(params, ext), upper_bound(params)))
    return rows


def _fmt(value: float) -> str:
    # Fixed 5-decimal formatting; Python's float formatting rounds half to even.
    return f"{value:.5f}"


def bounds_table_csv(rows: Sequence[tuple[float, float, float, float]]) -> str:
    lines = ["r0,nu,p_lower,p_upper"]
    for r0, nu, p_lo, p_hi in rows:
        lines.append(",".join(_fmt(v) for v in (r0, nu, p_lo, p_hi)))
    return "\n".join(lines) + "\n"


def sweep_csv(rows: Sequence[tuple[float, float, float]]) -> str:
    lines = ["r0,nu,p_upper"]
    for r0, nu, p_hi in rows:
        lines.append(",".join(_fmt(v) for v in (r0, nu, p_hi)))
    return "\n".join(lines) + "\n"


def extinction_table_csv(r0_list: Iterable[float]) -> str:
    """CSV of the extinction split per r0, with the 1-eps comparison column."""
    lines = ["r0,pi0,pi1,one_minus_eps"]
    for r0 in sorted(float(r) for r in r0_list):
        ext = solve_extinction(OffspringDistribution.poisson(r0))
        lines.append(
            ",".join(_fmt(v) for v in (r0, ext.pi0, ext.pi1, 1.0 - 1.0 / r0))
        )
    return "\n".join(lines) + "\n"
