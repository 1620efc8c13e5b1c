"""Agent-based harness marrying disease spread with the tracing protocol.

Uniformly mixing agents make daily contacts that can transmit infection;
contacts between two recorder adopters are logged into a contact graph.
Severe cases surface after an onset delay, each surfacing triggers cluster
discovery through the tracing engine, and discovered positives are
quarantined on the spot.  Runs are fully deterministic given the master
seed.

Modeling choices worth knowing about: contacts are sampled from the
infectious side (susceptible-to-susceptible meetings carry no tracing or
transmission information and are omitted); the test oracle is exact,
answering whether an agent was ever infected; quarantine applies to
confirmed positives that are still infected, since recovered agents are
already inert and never-infected contacts test negative.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import yaml

from .analytics import DiseaseParams
from .tracing import (
    DAY,
    NEAR,
    PROXIMITIES,
    CaseRecord,
    CaseStatus,
    ContactEvent,
    ContactGraph,
    RiskConfig,
    discover_cluster,
)

__all__ = [
    "ScenarioConfig",
    "DailyCounts",
    "InfectionRecord",
    "ClusterRecord",
    "DiscoveryRecord",
    "EpidemicTrace",
    "ReEstimate",
    "run_scenario",
    "measure_re",
    "trace_csv",
    "cluster_records_json",
]

# Agent states
SUSCEPTIBLE = 0
INFECTED = 1
QUARANTINED = 2
RECOVERED = 3


@dataclass(frozen=True)
class ScenarioConfig:
    """Full description of one simulated scenario.

    The calibration identity ties the contact process to the disease
    parameters: contacts/day x transmission probability x infectious days
    must equal r0, so the harness reproduces the intended reproduction
    ratio in the early exponential phase.  When ``transmission_prob`` is
    omitted it is derived from that identity.
    """

    population: int
    adoption_rate: float
    r0: float
    nu: float
    seed_infections: int = 1
    horizon_days: int = 90
    master_seed: int = 0
    contacts_per_day: int = 4
    transmission_prob: float | None = None
    contact_duration_minutes: float = 30.0
    contact_proximity: str = NEAR
    infectious_days: int = 5
    onset_delay_min: int = 3
    onset_delay_max: int = 10
    tracing_enabled: bool = True
    lookback_days: float = 14.0
    retention_days: float = 21.0
    record_event_log: bool = False

    def __post_init__(self) -> None:
        if self.population < 2:
            raise ValueError("population must hold at least two agents")
        if not 0.0 <= self.adoption_rate <= 1.0:
            raise ValueError("adoption rate must lie in [0, 1]")
        DiseaseParams(r0=self.r0, nu=self.nu)  # validates r0 and nu ranges
        if not 1 <= self.seed_infections <= self.population:
            raise ValueError("seed infections must fit inside the population")
        if self.horizon_days < 1:
            raise ValueError("horizon must be at least one day")
        if self.contacts_per_day < 1:
            raise ValueError("agents must make at least one contact per day")
        if self.infectious_days < 1:
            raise ValueError("infectious period must be at least one day")
        if not 0 <= self.onset_delay_min <= self.onset_delay_max:
            raise ValueError("onset delay range must be ordered and nonnegative")
        if self.contact_proximity not in PROXIMITIES:
            raise ValueError(f"unknown proximity {self.contact_proximity!r}")
        if self.transmission_prob is None:
            object.__setattr__(
                self,
                "transmission_prob",
                self.r0 / (self.contacts_per_day * self.infectious_days),
            )
        identity = self.contacts_per_day * self.transmission_prob * self.infectious_days
        if abs(identity - self.r0) > 1e-9:
            raise ValueError(
                "calibration identity violated: contacts/day * transmission prob "
                f"* infectious days = {identity}, expected r0 = {self.r0}"
            )
        if not 0.0 < self.transmission_prob <= 1.0:
            raise ValueError(
                f"transmission probability {self.transmission_prob} outside (0, 1]"
            )

    @property
    def params(self) -> DiseaseParams:
        return DiseaseParams(r0=self.r0, nu=self.nu)

    @classmethod
    def from_dict(cls, raw: dict) -> "ScenarioConfig":
        disease = raw.get("disease", {})
        contacts = raw.get("contacts", {})
        progression = raw.get("progression", {})
        tracing = raw.get("tracing", {})
        return cls(
            population=int(raw["population"]),
            adoption_rate=float(raw["adoption_rate"]),
            r0=float(disease["r0"]),
            nu=float(disease["nu"]),
            seed_infections=int(raw.get("seed_infections", 1)),
            horizon_days=int(raw.get("horizon_days", 90)),
            master_seed=int(raw.get("master_seed", 0)),
            contacts_per_day=int(contacts.get("per_day", 4)),
            transmission_prob=(
                float(contacts["transmission_prob"])
                if "transmission_prob" in contacts
                else None
            ),
            contact_duration_minutes=float(contacts.get("duration_minutes", 30.0)),
            contact_proximity=str(contacts.get("proximity", NEAR)),
            infectious_days=int(progression.get("infectious_days", 5)),
            onset_delay_min=int(progression.get("onset_delay_min", 3)),
            onset_delay_max=int(progression.get("onset_delay_max", 10)),
            tracing_enabled=bool(tracing.get("enabled", True)),
            lookback_days=float(tracing.get("lookback_days", 14.0)),
            retention_days=float(tracing.get("retention_days", 21.0)),
            record_event_log=bool(raw.get("record_event_log", False)),
        )

    @classmethod
    def from_yaml(cls, path: str | Path) -> "ScenarioConfig":
        with open(path, "r", encoding="utf-8") as handle:
            raw = yaml.safe_load(handle)
        if not isinstance(raw, dict):
            raise ValueError(f"{path}: scenario file must hold a mapping")
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return {
            "population": self.population,
            "adoption_rate": self.adoption_rate,
            "seed_infections": self.seed_infections,
            "horizon_days": self.horizon_days,
            "master_seed": self.master_seed,
            "record_event_log": self.record_event_log,
            "disease": {"r0": self.r0, "nu": self.nu},
            "contacts": {
                "per_day": self.contacts_per_day,
                "transmission_prob": self.transmission_prob,
                "duration_minutes": self.contact_duration_minutes,
                "proximity": self.contact_proximity,
            },
            "progression": {
                "infectious_days": self.infectious_days,
                "onset_delay_min": self.onset_delay_min,
                "onset_delay_max": self.onset_delay_max,
            },
            "tracing": {
                "enabled": self.tracing_enabled,
                "lookback_days": self.lookback_days,
                "retention_days": self.retention_days,
            },
        }


@dataclass(frozen=True)
class DailyCounts:
    day: int
    new_infections: int
    active: int
    quarantined: int
    recovered: int
    susceptible: int


@dataclass(frozen=True)
class InfectionRecord:
    """Ground-truth bookkeeping for one infected agent."""

    agent: int
    infector: int | None
    infected_day: int
    cluster_id: int
    cluster_order: int
    severe: bool
    adopter: bool
    onset_day: int | None
    quarantine_day: int | None
    recover_day: int | None
    confirmed: bool = False

    @property
    def active_at_horizon(self) -> bool:
        return self.quarantine_day is None and self.recover_day is None


@dataclass(frozen=True)
class ClusterRecord:
    """First discovery of a ground-truth cluster."""

    cluster_id: int
    origin_day: int
    discovery_day: int
    size_at_discovery: int
    n_discovered: int
    fraction_traced: float
    detection_order_index: int


@dataclass(frozen=True)
class DiscoveryRecord:
    """One surfacing event and the tracing response it triggered."""

    day: int
    seed: int
    confirmed: tuple[int, ...]
    negatives: tuple[int, ...]
    notified: tuple[int, ...]
    rounds: int


@dataclass(frozen=True)
class EpidemicTrace:
    config: ScenarioConfig
    days: tuple[DailyCounts, ...]
    infections: tuple[InfectionRecord, ...]
    clusters: tuple[ClusterRecord, ...]
    discoveries: tuple[DiscoveryRecord, ...]
    event_log: tuple[tuple[int, int, int], ...] = ()
    realized_re: float | None = None


@dataclass(frozen=True)
class ReEstimate:
    value: float
    ci_low: float
    ci_high: float
    n_parents: int
    per_trace: tuple[float, ...]
    low_confidence: bool


def run_scenario(config: ScenarioConfig) -> EpidemicTrace:
    """Run one scenario to its horizon.

    Per-day ordering: infectious agents (ascending id) sample their contacts
    and transmit; adopter-pair contacts are logged; at day end, severe cases
    past their onset delay surface, each triggering cluster discovery and
    instant quarantine of confirmed positives that are still infected;
    recoveries close the day.  All randomness flows from the master seed in
    this fixed order.
    """
    cfg = config
    rng = np.random.default_rng(cfg.master_seed)
    pop = cfg.population

    state = np.full(pop, SUSCEPTIBLE, dtype=np.int8)
    adopter = rng.random(pop) < cfg.adoption_rate
    severe = np.zeros(pop, dtype=bool)
    infected_day = np.full(pop, -1, dtype=np.int64)
    onset_day = np.full(pop, -1, dtype=np.int64)
    quarantine_day = np.full(pop, -1, dtype=np.int64)
    recover_day = np.full(pop, -1, dtype=np.int64)
    cluster_id = np.full(pop, -1, dtype=np.int64)
    cluster_order = np.full(pop, -1, dtype=np.int64)
    infector = np.full(pop, -1, dtype=np.int64)
    confirmed = np.zeros(pop, dtype=bool)

    graph = ContactGraph(retention=cfg.retention_days * DAY, risk=RiskConfig())
    contact_seconds = cfg.contact_duration_minutes * 60.0

    cluster_sizes: dict[int, int] = {}
    cluster_origin: dict[int, int] = {}
    discovered_clusters: set[int] = set()
    cluster_records: list[ClusterRecord] = []
    discovery_records: list[DiscoveryRecord] = []
    event_log: list[tuple[int, int, int]] = []
    daily: list[DailyCounts] = []

    def infect(agent: int, day: int, source: int | None) -> None:
        state[agent] = INFECTED
        infected_day[agent] = day
        infector[agent] = -1 if source is None else source
        severe[agent] = bool(rng.random() < cfg.nu)
        if severe[agent]:
            onset_day[agent] = day + int(
                rng.integers(cfg.onset_delay_min, cfg.onset_delay_max + 1)
            )
        if source is None:
            cid = len(cluster_sizes)
            cluster_sizes[cid] = 0
            cluster_origin[cid] = day
        else:
            cid = int(cluster_id[source])
        cluster_sizes[cid] += 1
        cluster_id[agent] = cid
        cluster_order[agent] = cluster_sizes[cid]

    seeds = rng.choice(pop, size=cfg.seed_infections, replace=False)
    for agent in sorted(int(s) for s in seeds):
        infect(agent, 0, None)

    def ever_infected(device: int) -> bool:
        return infected_day[device] >= 0

    for day in range(1, cfg.horizon_days + 1):
        # Contact and transmission phase.
        infectious = np.flatnonzero(
            (state == INFECTED)
            & (infected_day < day)
            & (day <= infected_day + cfg.infectious_days)
        )
        active = np.flatnonzero(state != QUARANTINED)
        if infectious.size and active.size >= 2:
            n_active = active.size
            for src in infectious:
                src = int(src)
                pos = int(np.searchsorted(active, src))
                draws = rng.integers(0, n_active - 1, size=cfg.contacts_per_day)
                draws = draws + (draws >= pos)
                targets = active[draws]
                u_transmit = rng.random(cfg.contacts_per_day)
                for k in range(cfg.contacts_per_day):
                    dst = int(targets[k])
                    if cfg.tracing_enabled and adopter[src] and adopter[dst]:
                        graph.ingest(
                            ContactEvent(
                                device_a=src,
                                device_b=dst,
                                start_time=day * DAY,
                                duration=contact_seconds,
                                proximity=cfg.contact_proximity,
                            )
                        )
                        if cfg.record_event_log:
                            event_log.append((day, min(src, dst), max(src, dst)))
                    if state[dst] == SUSCEPTIBLE and u_transmit[k] < cfg.transmission_prob:
                        infect(dst, day, src)

        # Surfacing and tracing phase (end of day, instantaneous response).
        if cfg.tracing_enabled:
            surfaced = np.flatnonzero(
                severe & (onset_day == day) & ~confirmed & (infected_day >= 0)
            )
            now = (day + 1) * DAY
            for seed_dev in surfaced:
                seed_dev = int(seed_dev)
                if confirmed[seed_dev]:
                    continue  # swept up by an earlier discovery today
                case = CaseRecord(
                    device=seed_dev,
                    status=CaseStatus.CONFIRMED_POSITIVE,
                    confirm_time=now,
                )
                report = discover_cluster(
                    case, graph, ever_infected, now, lookback=cfg.lookback_days * DAY
                )
                for dev in sorted(report.confirmed):
                    confirmed[dev] = True
                    if state[dev] == INFECTED:
                        state[dev] = QUARANTINED
                        quarantine_day[dev] = day
                discovery_records.append(
                    DiscoveryRecord(
                        day=day,
                        seed=seed_dev,
                        confirmed=tuple(sorted(report.confirmed)),
                        negatives=tuple(sorted(report.negatives)),
                        notified=tuple(sorted(report.notified)),
                        rounds=report.rounds,
                    )
                )
                cid = int(cluster_id[seed_dev])
                if cid not in discovered_clusters:
                    discovered_clusters.add(cid)
                    members = np.flatnonzero(cluster_id == cid)
                    inside = sum(1 for m in members if m in report.confirmed)
                    cluster_records.append(
                        ClusterRecord(
                            cluster_id=cid,
                            origin_day=cluster_origin[cid],
                            discovery_day=day,
                            size_at_discovery=int(members.size),
                            n_discovered=inside,
                            fraction_traced=inside / members.size,
                            detection_order_index=int(cluster_order[seed_dev]),
                        )
                    )

        # Recovery phase.
        recovering = np.flatnonzero(
            (state == INFECTED) & (day == infected_day + cfg.infectious_days)
        )
        state[recovering] = RECOVERED
        recover_day[recovering] = day

        counts = DailyCounts(
            day=day,
            new_infections=int(np.count_nonzero(infected_day == day)),
            active=int(np.count_nonzero(state == INFECTED)),
            quarantined=int(np.count_nonzero(state == QUARANTINED)),
            recovered=int(np.count_nonzero(state == RECOVERED)),
            susceptible=int(np.count_nonzero(state == SUSCEPTIBLE)),
        )
        if (
            counts.active + counts.quarantined + counts.recovered + counts.susceptible
            != pop
        ):
            raise AssertionError("state conservation violated")
        daily.append(counts)

        if cfg.tracing_enabled and day % 7 == 0:
            graph.purge((day + 1) * DAY)

    infections = tuple(
        InfectionRecord(
            agent=int(a),
            infector=None if infector[a] < 0 else int(infector[a]),
            infected_day=int(infected_day[a]),
            cluster_id=int(cluster_id[a]),
            cluster_order=int(cluster_order[a]),
            severe=bool(severe[a]),
            adopter=bool(adopter[a]),
            onset_day=None if onset_day[a] < 0 else int(onset_day[a]),
            quarantine_day=None if quarantine_day[a] < 0 else int(quarantine_day[a]),
            recover_day=None if recover_day[a] < 0 else int(recover_day[a]),
            confirmed=bool(confirmed[a]),
        )
        for a in np.flatnonzero(infected_day >= 0)
    )

    trace = EpidemicTrace(
        config=cfg,
        days=tuple(daily),
        infections=infections,
        clusters=tuple(cluster_records),
        discoveries=tuple(discovery_records),
        event_log=tuple(event_log),
    )
    estimate = _single_trace_re(trace)
    return EpidemicTrace(
        config=cfg,
        days=trace.days,
        infections=trace.infections,
        clusters=trace.clusters,
        discoveries=trace.discoveries,
        event_log=trace.event_log,
        realized_re=estimate,
    )


def _escaped_children_per_parent(
    trace: EpidemicTrace, settle_days: int, prevalence_cutoff: float
) -> tuple[int, int]:
    """(total escaping children, parent count) for one trace.

    A child escapes unless the whole transmission subtree it started was
    removed by horizon: every subtree member confirmed and none still
    infected.  That is the same full-trace bookkeeping the cluster-level
    Monte Carlo uses for X, so the two estimators target the same quantity.
    Parents are restricted to early, settled infections: infected while
    cumulative infections stayed under the prevalence cutoff (keeping the
    branching approximation honest) and early enough that their children's
    subtrees had time to resolve.
    """
    cfg = trace.config
    cutoff_count = prevalence_cutoff * cfg.population
    by_day: dict[int, int] = {}
    for rec in trace.infections:
        by_day[rec.infected_day] = by_day.get(rec.infected_day, 0) + 1
    cumulative: dict[int, int] = {}
    running = 0
    for day in range(0, cfg.horizon_days + 1):
        running += by_day.get(day, 0)
        cumulative[day] = running

    by_agent = {rec.agent: rec for rec in trace.infections}
    children: dict[int, list[int]] = {}
    for rec in trace.infections:
        if rec.infector is not None:
            children.setdefault(rec.infector, []).append(rec.agent)

    # subtree_removed[agent]: the agent's whole transmission subtree was
    # confirmed and stopped by horizon.  Iterative post-order over the forest.
    subtree_removed: dict[int, bool] = {}

    def removed(agent: int) -> bool:
        if agent in subtree_removed:
            return subtree_removed[agent]
        stack = [(agent, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                rec = by_agent[node]
                ok = rec.confirmed and not rec.active_at_horizon
                if ok:
                    ok = all(subtree_removed[c] for c in children.get(node, ()))
                subtree_removed[node] = ok
            elif node not in subtree_removed:
                stack.append((node, True))
                stack.extend((c, False) for c in children.get(node, ()))
        return subtree_removed[agent]

    escaped = 0
    parents = 0
    latest = cfg.horizon_days - settle_days
    for rec in trace.infections:
        if rec.infected_day > latest:
            continue
        if cumulative[rec.infected_day] > cutoff_count:
            continue
        parents += 1
        escaped += sum(1 for c in children.get(rec.agent, ()) if not removed(c))
    return escaped, parents


def _single_trace_re(trace: EpidemicTrace, settle_days: int = 15) -> float | None:
    escaped, parents = _escaped_children_per_parent(trace, settle_days, prevalence_cutoff=0.10)
    if parents < 10:
        return None
    return escaped / parents


def measure_re(
    traces: list[EpidemicTrace],
    settle_days: int = 15,
    prevalence_cutoff: float = 0.10,
) -> ReEstimate:
    """Realized reproduction under tracing, aggregated across replicate runs.

    For every agent infected early enough to have a settled outcome, count
    the direct infections it caused whose recipients were never quarantined;
    the ratio of those escaped children to parents estimates the effective
    reproduction ratio.  The interval is a normal approximation over the
    per-trace ratios; the estimate is flagged low-confidence when too few
    parents or replicates are available.
    """
    if not traces:
        raise ValueError("need at least one trace")
    first = traces[0].config
    for tr in traces[1:]:
        if tr.config.to_dict() != {
            **first.to_dict(),
            "master_seed": tr.config.master_seed,
        }:
            raise ValueError("traces must share a config up to the master seed")

    per_trace = []
    total_parents = 0
    total_escaped = 0
    for tr in traces:
        escaped, parents = _escaped_children_per_parent(tr, settle_days, prevalence_cutoff)
        total_parents += parents
        total_escaped += escaped
        if parents > 0:
            per_trace.append(escaped / parents)

    if total_parents == 0:
        return ReEstimate(
            value=math.nan, ci_low=math.nan, ci_high=math.nan,
            n_parents=0, per_trace=(), low_confidence=True,
        )
    value = total_escaped / total_parents
    if len(per_trace) >= 2:
        spread = float(np.std(per_trace, ddof=1)) / math.sqrt(len(per_trace))
    else:
        spread = math.nan
    half = 1.959963984540054 * spread if not math.isnan(spread) else math.nan
    low_confidence = total_parents < 100 or len(per_trace) < 3
    return ReEstimate(
        value=value,
        ci_low=value - half if not math.isnan(half) else math.nan,
        ci_high=value + half if not math.isnan(half) else math.nan,
        n_parents=total_parents,
        per_trace=tuple(per_trace),
        low_confidence=low_confidence,
    )


def trace_csv(trace: EpidemicTrace) -> str:
    lines = ["day,new_inf,active,quarantined"]
    for d in trace.days:
        lines.append(f"{d.day},{d.new_infections},{d.active},{d.quarantined}")
    return "\n".join(lines) + "\n"


def cluster_records_json(trace: EpidemicTrace) -> str:
    payload = {
        "realized_re": trace.realized_re,
        "clusters": [asdict(c) for c in trace.clusters],
        "discoveries": [
            {
                "day": d.day,
                "seed": d.seed,
                "confirmed": list(d.confirmed),
                "negatives": list(d.negatives),
                "notified": list(d.notified),
                "rounds": d.rounds,
            }
            for d in trace.discoveries
        ],
    }
    return json.dumps(payload, indent=2, sort_keys=True)
