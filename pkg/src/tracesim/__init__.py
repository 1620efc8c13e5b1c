"""tracesim: branching-process analytics and simulation for device-based tracing.

The package has four layers:

* :mod:`tracesim.analytics` -- closed-form extinction probabilities,
  severity detection odds, and the lower/upper bracket on the minimum
  recorder adoption rate.
* :mod:`tracesim.montecarlo` -- seeded Galton-Watson cluster simulation
  estimating the full-trace probability and the empirical minimum adoption
  rate, validated against the closed forms.
* :mod:`tracesim.tracing` -- the contact-recorder protocol: event store
  with retention, risk scoring, beacon co-presence, and iterative cluster
  discovery against a test oracle.
* :mod:`tracesim.abm` -- an agent-based harness wiring disease spread into
  the tracing engine, with quarantine of discovered clusters.

The ``tracesim`` console script exposes all of it behind reproducible,
manifest-backed subcommands.
"""

__version__ = "0.1.0"

from .analytics import (
    AdoptionBounds,
    DiseaseParams,
    ExtinctionResult,
    OffspringDistribution,
    adoption_bounds,
    analytic_px0_bracket,
    effective_r,
    lower_bound,
    mu_k,
    solve_extinction,
    sweep_upper_bound,
    upper_bound,
)
from .montecarlo import (
    ClusterOutcome,
    InfectionNode,
    MCEstimate,
    PStarEstimate,
    estimate_pstar,
    estimate_px0,
    simulate_cluster,
    trial_seed,
    wilson_interval,
)
from .tracing import (
    BeaconEvent,
    CaseRecord,
    CaseStatus,
    ClusterReport,
    ContactEvent,
    ContactGraph,
    Exposure,
    RiskAssessment,
    RiskConfig,
    discover_cluster,
    risk_score,
)
from .abm import (
    EpidemicTrace,
    ReEstimate,
    ScenarioConfig,
    measure_re,
    run_scenario,
)

__all__ = [
    "__version__",
    "AdoptionBounds",
    "DiseaseParams",
    "ExtinctionResult",
    "OffspringDistribution",
    "adoption_bounds",
    "analytic_px0_bracket",
    "effective_r",
    "lower_bound",
    "mu_k",
    "solve_extinction",
    "sweep_upper_bound",
    "upper_bound",
    "ClusterOutcome",
    "InfectionNode",
    "MCEstimate",
    "PStarEstimate",
    "estimate_pstar",
    "estimate_px0",
    "simulate_cluster",
    "trial_seed",
    "wilson_interval",
    "BeaconEvent",
    "CaseRecord",
    "CaseStatus",
    "ClusterReport",
    "ContactEvent",
    "ContactGraph",
    "Exposure",
    "RiskAssessment",
    "RiskConfig",
    "discover_cluster",
    "risk_score",
    "EpidemicTrace",
    "ReEstimate",
    "ScenarioConfig",
    "measure_re",
    "run_scenario",
]
