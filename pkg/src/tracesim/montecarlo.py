"""Monte Carlo realization of cluster traceability under partial adoption.

Clusters grow breadth-first: node ids follow infection order, every node
draws an offspring count, an adoption flag (uniform < p) and a severity
flag (uniform < nu).  A cluster counts as fully traced when a detection
event exists and everyone infected up to that point, detection case
included, carries a recorder.

Two detection models are supported, because the closed-form adoption-rate
bounds and the literal first-severe-case event differ in how finite
clusters surface:

* ``realized``: detection happens at the first node whose severity flag
  actually came up.  A cluster that dies out with no severe member is never
  detected.  This is the event used in the traceability theorem's proof,
  whose one-sided bound ``P(X=0) >= pi1 * nu*p/(1-p(1-nu))`` this model
  obeys.
* ``surveilled``: every completed cluster eventually comes to the
  surveillance system's attention; for a cluster of size k the size at
  detection follows the first-severe law conditioned on detection,
  ``P(J=j) = (1-nu)^(j-1) nu / mu_k``.  This is the model behind the
  closed-form lower/upper adoption bounds, and under it the estimate of
  P(X=0) is sandwiched by ``analytic_px0_bracket`` deterministically.

``simulate_cluster`` defaults to ``realized`` (the literal event); the
estimators default to ``surveilled`` (the model the adoption-rate tables
quantify).

Determinism contract: one trial consumes randomness in a fixed order
(root adoption, root severity, then per generation: offspring counts,
children adoption, children severity, and for surveilled fallback one
final uniform), so an identical seed reproduces an identical outcome, and
per-trial seeds derived from a master seed make estimates independent of
worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .analytics import DiseaseParams, OffspringDistribution

__all__ = [
    "InfectionNode",
    "ClusterOutcome",
    "MCEstimate",
    "PStarPoint",
    "PStarEstimate",
    "trial_seed",
    "wilson_interval",
    "simulate_cluster",
    "estimate_px0",
    "estimate_pstar",
    "estimates_csv",
    "estimate_summary",
]

REALIZED = "realized"
SURVEILLED = "surveilled"
_Z95 = 1.959963984540054


@dataclass(frozen=True)
class InfectionNode:
    """One infected individual: id in infection order, parent id, coin flips."""

    id: int
    parent: int | None
    adopter: bool
    severe: bool


@dataclass(frozen=True)
class ClusterOutcome:
    """One realized cluster.

    ``size`` is the eventual size, or the cap when ``truncated`` is set.
    ``detection_index`` is the cluster size at detection (none when the
    cluster was never detected).  ``traced`` is the full-trace event X=0:
    detection occurred and all nodes up to it carry recorders.
    """

    size: int
    truncated: bool
    detection_index: int | None
    traced: bool
    nodes: tuple[InfectionNode, ...] | None = None

    @property
    def x_value(self) -> int:
        return 0 if self.traced else 1


@dataclass(frozen=True)
class MCEstimate:
    """Estimated P(X=0) with Wilson 95% interval and derived effective ratio."""

    n_trials: int
    n_traced: int
    p_hat: float
    ci_low: float
    ci_high: float
    r_e_hat: float
    master_seed: int
    p: float
    cap: int
    detection: str

    @property
    def ci_half_width(self) -> float:
        return 0.5 * (self.ci_high - self.ci_low)


@dataclass(frozen=True)
class PStarPoint:
    p: float
    estimate: MCEstimate
    re_ci_low: float
    re_ci_high: float


@dataclass(frozen=True)
class PStarEstimate:
    """Grid estimate of the minimum adoption rate with its full curve.

    ``p_star`` is the smallest grid point whose upper confidence limit for
    the effective reproduction ratio lies below 1, or None when no grid
    point achieves that.  Raw estimates are reported; no smoothing.
    """

    p_star: float | None
    curve: tuple[PStarPoint, ...]


def trial_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    """Stable per-trial seed: SeedSequence keyed on (master_seed, index).

    The derivation is order-free, so fanning trials out to any number of
    workers reproduces the exact same stream per trial.
    """
    return np.random.SeedSequence((master_seed, index))


def wilson_interval(successes: int, n: int, z: float = _Z95) -> tuple[float, float]:
    """Wilson score interval; well behaved near proportions of 0 or 1."""
    if n < 1:
        raise ValueError("need at least one trial")
    p_hat = successes / n
    denom = 1.0 + z * z / n
    center = (p_hat + z * z / (2.0 * n)) / denom
    half = z * math.sqrt(p_hat * (1.0 - p_hat) / n + z * z / (4.0 * n * n)) / denom
    # The degenerate endpoints are exactly 0 and 1; snap float round-off.
    low = 0.0 if successes == 0 else max(0.0, center - half)
    high = 1.0 if successes == n else min(1.0, center + half)
    return low, high


def _conditional_detection_index(u: float, nu: float, size: int) -> int:
    # Inverse CDF of P(J=j) = (1-nu)^(j-1) nu / mu_k on {1..size}.
    mu = 1.0 - (1.0 - nu) ** size
    j = math.ceil(math.log1p(-u * mu) / math.log1p(-nu))
    return min(max(int(j), 1), size)


def simulate_cluster(
    params: DiseaseParams,
    dist: OffspringDistribution,
    p: float,
    cap: int,
    seed: int | np.random.SeedSequence,
    detection: str = REALIZED,
    keep_nodes: bool = False,
) -> ClusterOutcome:
    """Grow one cluster breadth-first and resolve its traceability.

    Growth stops at extinction or when the size reaches ``cap``.  A run that
    hits the cap without any severe member is reported truncated and counts
    as untraced (conservative) under both detection models.  Each node's
    adoption flag is a per-node uniform compared against ``p``, so runs with
    a common seed are coupled monotonically across adoption rates.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"adoption rate must lie in [0, 1], got {p}")
    if cap < 1:
        raise ValueError("cap must be at least 1")
    if detection not in (REALIZED, SURVEILLED):
        raise ValueError(f"unknown detection model {detection!r}")

    rng = np.random.default_rng(seed)
    nu = params.nu

    # Root node. Draw order is part of the determinism contract.
    root_adopt = bool(rng.random() < p)
    root_severe = bool(rng.random() < nu)

    size = 1
    truncated = size >= cap
    detection_index: int | None = 1 if root_severe else None
    first_non_adopter: int | None = None if root_adopt else 0

    parents: list[np.ndarray] = []
    adopt_gens: list[np.ndarray] = []
    severe_gens: list[np.ndarray] = []
    if keep_nodes:
        adopt_gens.append(np.array([root_adopt]))
        severe_gens.append(np.array([root_severe]))
        parents.append(np.array([-1], dtype=np.int64))

    gen_start = 0  # id of the first node in the current generation
    gen_size = 1
    while not truncated:
        counts = dist.sample(rng, gen_size)
        n_children = int(counts.sum())
        if n_children == 0:
            break
        room = cap - size
        clipped = min(n_children, room)
        u_adopt = rng.random(clipped)
        u_severe = rng.random(clipped)
        adopt = u_adopt < p
        severe = u_severe < nu

        child_base = gen_start + gen_size
        if detection_index is None:
            sev_at = np.flatnonzero(severe)
            if sev_at.size:
                detection_index = child_base + int(sev_at[0]) + 1
        if first_non_adopter is None:
            na_at = np.flatnonzero(~adopt)
            if na_at.size:
                first_non_adopter = child_base + int(na_at[0])

        if keep_nodes:
            child_parents = np.repeat(
                np.arange(gen_start, gen_start + gen_size, dtype=np.int64), counts
            )[:clipped]
            parents.append(child_parents)
            adopt_gens.append(adopt)
            severe_gens.append(severe)

        size += clipped
        gen_start = child_base
        gen_size = clipped
        if size >= cap:
            truncated = True

    if detection_index is None and not truncated and detection == SURVEILLED:
        # The surveillance system eventually notices every completed cluster;
        # its size at detection follows the first-severe law conditioned on
        # at least one severe member.
        detection_index = _conditional_detection_index(float(rng.random()), nu, size)

    traced = detection_index is not None and (
        first_non_adopter is None or first_non_adopter >= detection_index
    )

    nodes = None
    if keep_nodes:
        all_parents = np.concatenate(parents)
        all_adopt = np.concatenate(adopt_gens)
        all_severe = np.concatenate(severe_gens)
        nodes = tuple(
            InfectionNode(
                id=i,
                parent=None if all_parents[i] < 0 else int(all_parents[i]),
                adopter=bool(all_adopt[i]),
                severe=bool(all_severe[i]),
            )
            for i in range(size)
        )

    return ClusterOutcome(
        size=size,
        truncated=truncated,
        detection_index=detection_index,
        traced=bool(traced),
        nodes=nodes,
    )


def _count_traced(
    params: DiseaseParams,
    dist: OffspringDistribution,
    p: float,
    cap: int,
    master_seed: int,
    lo: int,
    hi: int,
    detection: str,
) -> int:
    traced = 0
    for i in range(lo, hi):
        outcome = simulate_cluster(
            params, dist, p, cap, trial_seed(master_seed, i), detection=detection
        )
        traced += outcome.traced
    return traced


def estimate_px0(
    params: DiseaseParams,
    dist: OffspringDistribution,
    p: float,
    cap: int,
    n_trials: int,
    master_seed: int,
    detection: str = SURVEILLED,
    workers: int = 1,
) -> MCEstimate:
    """Estimate P(X=0) from independent cluster trials.

    Trial ``i`` runs on the seed ``trial_seed(master_seed, i)``; aggregation
    is a pure count, so the estimate is bit-identical for any worker count.
    """
    if n_trials < 1:
        raise ValueError("need at least one trial")
    if workers < 1:
        raise ValueError("worker count must be positive")

    if workers == 1:
        traced = _count_traced(params, dist, p, cap, master_seed, 0, n_trials, detection)
    else:
        chunk = max(1, math.ceil(n_trials / workers))
        ranges = [(lo, min(lo + chunk, n_trials)) for lo in range(0, n_trials, chunk)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = pool.map(
                lambda r: _count_traced(
                    params, dist, p, cap, master_seed, r[0], r[1], detection
                ),
                ranges,
            )
            traced = sum(parts)

    p_hat = traced / n_trials
    ci_low, ci_high = wilson_interval(traced, n_trials)
    return MCEstimate(
        n_trials=n_trials,
        n_traced=traced,
        p_hat=p_hat,
        ci_low=ci_low,
        ci_high=ci_high,
        r_e_hat=params.r0 * (1.0 - p_hat),
        master_seed=master_seed,
        p=p,
        cap=cap,
        detection=detection,
    )


def estimate_pstar(
    params: DiseaseParams,
    dist: OffspringDistribution,
    cap: int,
    n_trials_per_point: int,
    p_grid: Sequence[float],
    master_seed: int,
    detection: str = SURVEILLED,
    workers: int = 1,
) -> PStarEstimate:
    """Scan the adoption grid for the smallest rate that reins the spread in.

    Every grid point reuses the same per-trial seeds (common random
    numbers), which couples the adoption draws across rates and keeps the
    curve monotone path by path.  A point qualifies when the upper
    confidence limit of its effective reproduction ratio sits below 1; the
    first qualifying point is reported, or None when no point qualifies.
    """
    grid = [float(g) for g in p_grid]
    if not grid:
        raise ValueError("p grid must be nonempty")
    if any(not 0.0 < g < 1.0 for g in grid):
        raise ValueError("p grid values must lie strictly inside (0, 1)")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("p grid must be strictly increasing")

    curve = []
    p_star = None
    for p in grid:
        est = estimate_px0(
            params, dist, p, cap, n_trials_per_point, master_seed,
            detection=detection, workers=workers,
        )
        # R_e falls as P(X=0) rises, so its CI flips the Wilson endpoints.
        re_low = params.r0 * (1.0 - est.ci_high)
        re_high = params.r0 * (1.0 - est.ci_low)
        curve.append(PStarPoint(p=p, estimate=est, re_ci_low=re_low, re_ci_high=re_high))
        if p_star is None and re_high < 1.0:
            p_star = p
    return PStarEstimate(p_star=p_star, curve=tuple(curve))


def estimates_csv(points: Sequence[PStarPoint]) -> str:
    lines = ["p,p_hat,ci_low,ci_high,re_hat"]
    for pt in points:
        est = pt.estimate
        lines.append(
            ",".join(
                f"{v:.5f}"
                for v in (pt.p, est.p_hat, est.ci_low, est.ci_high, est.r_e_hat)
            )
        )
    return "\n".join(lines) + "\n"


def estimate_summary(
    points: Sequence[PStarPoint], master_seed: int, cap: int, n_trials: int
) -> dict:
    """JSON-ready reproduction record for a grid of estimates."""
    return {
        "master_seed": master_seed,
        "cap": cap,
        "n_trials": n_trials,
        "detection": points[0].estimate.detection if points else None,
        "p_grid": [pt.p for pt in points],
    }
