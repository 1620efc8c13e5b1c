"""Contact-recorder tracing engine: event store, risk scoring, cluster discovery.

The server-side picture: devices report proximity contacts and beacon
sightings; the store merges them into per-pair interval logs with a
retention horizon; when a case is confirmed, repeated downstream/upstream
expansion over recent qualifying contacts, driven by a test oracle,
recovers the whole infection cluster.

Edge direction (who infected whom) is deliberately not inferred; reports
carry the undirected contact subgraph among positives plus exposure
summaries, leaving tree reconstruction to consumers.
"""

from __future__ import annotations

import json
from bisect import bisect_left
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Iterator

__all__ = [
    "DAY",
    "DEFAULT_LOOKBACK",
    "DEFAULT_RETENTION",
    "ContactEvent",
    "BeaconEvent",
    "CaseRecord",
    "CaseStatus",
    "RiskConfig",
    "Exposure",
    "RiskAssessment",
    "ContactQuery",
    "ClusterReport",
    "ContactGraph",
    "risk_score",
    "discover_cluster",
    "load_contact_log",
    "write_contact_log",
    "ingest_log",
    "bundled_fig1_path",
]

DAY = 86_400.0
DEFAULT_LOOKBACK = 14 * DAY
DEFAULT_RETENTION = 21 * DAY

IMMEDIATE = "immediate"
NEAR = "near"
FAR = "far"
PROXIMITIES = (IMMEDIATE, NEAR, FAR)

# Sensed-distance fallback when an event reports meters instead of a class.
# Next-to-each-other reads as immediate, up to a few meters as near,
# anything beyond as far.
IMMEDIATE_MAX_METERS = 1.0
NEAR_MAX_METERS = 3.0


def proximity_from_distance(meters: float) -> str:
    if meters < 0.0:
        raise ValueError("measured distance must be nonnegative")
    if meters <= IMMEDIATE_MAX_METERS:
        return IMMEDIATE
    if meters <= NEAR_MAX_METERS:
        return NEAR
    return FAR


@dataclass(frozen=True)
class ContactEvent:
    """One recorded proximity contact between two devices.

    The device pair is unordered and normalized to ``device_a < device_b``.
    Exactly one of ``proximity`` (class) or ``measured_distance`` (meters)
    must be given; a raw distance is mapped to its class at construction.
    """

    device_a: int
    device_b: int
    start_time: float
    duration: float
    proximity: str | None = None
    measured_distance: float | None = None

    def __post_init__(self) -> None:
        if self.device_a == self.device_b:
            raise ValueError("a device cannot contact itself")
        if self.device_a > self.device_b:
            a, b = self.device_b, self.device_a
            object.__setattr__(self, "device_a", a)
            object.__setattr__(self, "device_b", b)
        if self.start_time < 0.0:
            raise ValueError("start time must be nonnegative")
        if not self.duration > 0.0:
            raise ValueError("duration must be positive")
        if (self.proximity is None) == (self.measured_distance is None):
            raise ValueError("exactly one of proximity or measured_distance required")
        if self.proximity is None:
            object.__setattr__(
                self, "proximity", proximity_from_distance(self.measured_distance)
            )
        elif self.proximity not in PROXIMITIES:
            raise ValueError(f"unknown proximity class {self.proximity!r}")

    @property
    def end_time(self) -> float:
        return self.start_time + self.duration


@dataclass(frozen=True)
class BeaconEvent:
    """A device dwelling near a fixed-location beacon."""

    device: int
    beacon: int
    time: float
    dwell: float

    def __post_init__(self) -> None:
        if self.time < 0.0:
            raise ValueError("time must be nonnegative")
        if self.dwell < 0.0:
            raise ValueError("dwell must be nonnegative")

    @property
    def end_time(self) -> float:
        return self.time + self.dwell


class CaseStatus:
    CONFIRMED_POSITIVE = "confirmed_positive"
    TESTED_NEGATIVE = "tested_negative"
    UNTESTED = "untested"


@dataclass(frozen=True)
class CaseRecord:
    device: int
    status: str
    confirm_time: float | None = None

    def __post_init__(self) -> None:
        if self.status not in (
            CaseStatus.CONFIRMED_POSITIVE,
            CaseStatus.TESTED_NEGATIVE,
            CaseStatus.UNTESTED,
        ):
            raise ValueError(f"unknown case status {self.status!r}")
        has_time = self.confirm_time is not None
        if (self.status == CaseStatus.UNTESTED) == has_time:
            raise ValueError("confirm_time present iff the case was tested")


@dataclass(frozen=True)
class RiskConfig:
    """Risk weights per exposure minute and the action thresholds.

    Defaults anchor 30 near-range minutes exactly at the quarantine
    threshold, with immediate-range minutes weighted four times as heavily.
    The infectiousness multiplier scales the score when the index case's
    contagiousness at contact time is known; it defaults to neutral.
    """

    weight_immediate: float = 4.0
    weight_near: float = 1.0
    quarantine_threshold: float = 30.0
    caution_threshold: float = 5.0
    infectiousness_multiplier: float = 1.0


ACTION_TEST_AND_QUARANTINE = "test_and_quarantine"
ACTION_NOTIFY_CAUTION = "notify_caution"
ACTION_NONE = "none"


@dataclass(frozen=True)
class Exposure:
    """Aggregated exposure of one device to a queried case inside a window."""

    device: int
    seconds_immediate: float = 0.0
    seconds_near: float = 0.0

    @property
    def minutes_immediate(self) -> float:
        return self.seconds_immediate / 60.0

    @property
    def minutes_near(self) -> float:
        return self.seconds_near / 60.0


@dataclass(frozen=True)
class RiskAssessment:
    device: int
    score: float
    action: str


def risk_score(exposure: Exposure, config: RiskConfig = RiskConfig()) -> RiskAssessment:
    """Score an aggregated exposure and map it onto an action band."""
    if exposure.seconds_immediate < 0.0 or exposure.seconds_near < 0.0:
        raise ValueError("exposure durations must be nonnegative")
    score = config.infectiousness_multiplier * (
        config.weight_immediate * exposure.minutes_immediate
        + config.weight_near * exposure.minutes_near
    )
    if score >= config.quarantine_threshold:
        action = ACTION_TEST_AND_QUARANTINE
    elif score >= config.caution_threshold:
        action = ACTION_NOTIFY_CAUTION
    else:
        action = ACTION_NONE
    return RiskAssessment(device=exposure.device, score=score, action=action)


@dataclass(frozen=True)
class ContactQuery:
    """Result of a contacts-of lookup: scored exposures, descending by risk.

    ``unknown_device`` flags a query for a device the store has never seen
    (non-adopters are invisible to the recorder system).
    """

    exposures: tuple[tuple[Exposure, RiskAssessment], ...]
    unknown_device: bool = False


@dataclass
class ClusterReport:
    """Outcome of iterative cluster discovery from one confirmed seed case."""

    seed: int
    confirmed: set[int] = field(default_factory=set)
    negatives: set[int] = field(default_factory=set)
    notified: set[int] = field(default_factory=set)
    rounds: int = 0
    edges: list[dict] = field(default_factory=list)
    incomplete: bool = False

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "confirmed": sorted(self.confirmed),
            "negatives": sorted(self.negatives),
            "notified": sorted(self.notified),
            "rounds": self.rounds,
            "edges": self.edges,
            "incomplete": self.incomplete,
        }


def _merge_interval(intervals: list[list[float]], start: float, end: float) -> None:
    # Insert [start, end] into a sorted disjoint list, merging anything that
    # overlaps or exactly abuts it.
    i = bisect_left(intervals, [start, end])
    intervals.insert(i, [start, end])
    j = max(0, i - 1)
    while j < len(intervals) - 1:
        cur, nxt = intervals[j], intervals[j + 1]
        if nxt[0] <= cur[1]:
            cur[1] = max(cur[1], nxt[1])
            del intervals[j + 1]
        else:
            j += 1


def _overlap(a0: float, a1: float, b0: float, b1: float) -> float:
    return max(0.0, min(a1, b1) - max(a0, b0))


def _intersects(a0: float, a1: float, b0: float, b1: float) -> bool:
    return min(a1, b1) >= max(a0, b0)


class ContactGraph:
    """Merged-interval contact store with beacon co-presence and retention.

    Ingestion is single-writer: events apply in call order.  Queries read
    the current state; the discovery routine takes whatever state exists at
    call time.  Events older than the retention horizon are dropped by
    ``purge``; an event ending exactly on the horizon is kept.
    """

    def __init__(
        self,
        retention: float = DEFAULT_RETENTION,
        risk: RiskConfig = RiskConfig(),
    ) -> None:
        if not retention > 0.0:
            raise ValueError("retention horizon must be positive")
        self.retention = retention
        self.risk = risk
        # pair -> proximity class -> sorted disjoint [start, end] intervals
        self._pairs: dict[tuple[int, int], dict[str, list[list[float]]]] = {}
        self._neighbors: dict[int, set[int]] = {}
        self._beacon_locations: dict[int, str] = {}
        # beacon -> device -> sorted disjoint dwell intervals
        self._dwells: dict[int, dict[int, list[list[float]]]] = {}
        self._last_purge = 0.0

    # -- ingestion ---------------------------------------------------------

    def register_beacon(self, beacon: int, location: str) -> None:
        self._beacon_locations[beacon] = location

    def knows_beacon(self, beacon: int) -> bool:
        return beacon in self._beacon_locations

    def knows_device(self, device: int) -> bool:
        return device in self._neighbors

    def ingest(self, event: ContactEvent | BeaconEvent) -> None:
        """Merge one event into the store; exact duplicates are no-ops."""
        if isinstance(event, ContactEvent):
            pair = (event.device_a, event.device_b)
            classes = self._pairs.setdefault(pair, {})
            intervals = classes.setdefault(event.proximity, [])
            _merge_interval(intervals, event.start_time, event.end_time)
            self._neighbors.setdefault(event.device_a, set()).add(event.device_b)
            self._neighbors.setdefault(event.device_b, set()).add(event.device_a)
        elif isinstance(event, BeaconEvent):
            if event.beacon not in self._beacon_locations:
                raise ValueError(f"beacon {event.beacon} is not registered")
            per_device = self._dwells.setdefault(event.beacon, {})
            intervals = per_device.setdefault(event.device, [])
            _merge_interval(intervals, event.time, event.end_time)
            self._neighbors.setdefault(event.device, set())
        else:
            raise TypeError(f"cannot ingest {type(event).__name__}")

    def purge(self, now: float) -> int:
        """Drop every stored interval ending before ``now`` minus retention.

        Returns the number of intervals removed.  The boundary is closed: an
        interval ending exactly on the horizon stays.
        """
        if now < self._last_purge:
            raise ValueError("purge times must be nondecreasing")
        self._last_purge = now
        horizon = now - self.retention
        removed = 0
        for pair in list(self._pairs):
            classes = self._pairs[pair]
            for prox in list(classes):
                kept = [iv for iv in classes[prox] if iv[1] >= horizon]
                removed += len(classes[prox]) - len(kept)
                if kept:
                    classes[prox] = kept
                else:
                    del classes[prox]
            if not classes:
                del self._pairs[pair]
                a, b = pair
                self._neighbors[a].discard(b)
                self._neighbors[b].discard(a)
        for beacon in list(self._dwells):
            per_device = self._dwells[beacon]
            for device in list(per_device):
                kept = [iv for iv in per_device[device] if iv[1] >= horizon]
                removed += len(per_device[device]) - len(kept)
                if kept:
                    per_device[device] = kept
                else:
                    del per_device[device]
            if not per_device:
                del self._dwells[beacon]
        return removed

    # -- queries -----------------------------------------------------------

    def pair_exposure_in_window(
        self, a: int, b: int, window_start: float, window_end: float
    ) -> Exposure:
        """Non-far exposure of ``b`` attributed to contact with ``a``."""
        pair = (min(a, b), max(a, b))
        classes = self._pairs.get(pair, {})
        seconds = {IMMEDIATE: 0.0, NEAR: 0.0}
        for prox in (IMMEDIATE, NEAR):
            for start, end in classes.get(prox, ()):
                seconds[prox] += _overlap(start, end, window_start, window_end)
        return Exposure(
            device=b,
            seconds_immediate=seconds[IMMEDIATE],
            seconds_near=seconds[NEAR],
        )

    def contacts_of(
        self,
        device: int,
        window_end: float,
        lookback: float = DEFAULT_LOOKBACK,
    ) -> ContactQuery:
        """Scored contacts of ``device`` inside [window_end - lookback, window_end].

        Far-class intervals never qualify and never contribute exposure.
        Results are sorted by descending risk score, ties by device id.
        """
        if not self.knows_device(device):
            return ContactQuery(exposures=(), unknown_device=True)
        window_start = window_end - lookback
        found = []
        for other in self._neighbors.get(device, ()):
            pair = (min(device, other), max(device, other))
            classes = self._pairs.get(pair, {})
            qualifies = any(
                _intersects(start, end, window_start, window_end)
                for prox in (IMMEDIATE, NEAR)
                for start, end in classes.get(prox, ())
            )
            if not qualifies:
                continue
            exposure = self.pair_exposure_in_window(
                device, other, window_start, window_end
            )
            found.append((exposure, risk_score(exposure, self.risk)))
        found.sort(key=lambda pair: (-pair[1].score, pair[0].device))
        return ContactQuery(exposures=tuple(found), unknown_device=False)

    def beacon_copresence(
        self, beacon: int, interval: tuple[float, float]
    ) -> set[int]:
        """Devices whose dwell near ``beacon`` intersects the query interval."""
        if beacon not in self._beacon_locations:
            raise ValueError(f"beacon {beacon} is not registered")
        q0, q1 = interval
        if q1 < q0:
            raise ValueError("interval end must not precede its start")
        hits = set()
        for device, intervals in self._dwells.get(beacon, {}).items():
            if any(_intersects(start, end, q0, q1) for start, end in intervals):
                hits.add(device)
        return hits

    def interval_count(self) -> int:
        total = sum(
            len(ivs) for classes in self._pairs.values() for ivs in classes.values()
        )
        total += sum(
            len(ivs) for per_dev in self._dwells.values() for ivs in per_dev.values()
        )
        return total


TestOracle = Callable[[int], bool]


def discover_cluster(
    seed: CaseRecord,
    graph: ContactGraph,
    oracle: TestOracle,
    now: float,
    lookback: float = DEFAULT_LOOKBACK,
) -> ClusterReport:
    """Expand from a confirmed case to the full cluster reachable by tracing.

    Every round takes the newly confirmed cases, pulls their qualifying
    contacts inside the lookback window, and submits each contact scoring at
    or above the caution threshold to the test oracle.  Positives join the
    confirmed set and seed the next round; the loop runs to a fixpoint.
    Contacts with nonzero qualifying exposure below the caution band receive
    a caution notice but are not tested.

    An oracle failure aborts expansion and flags the report incomplete.
    The report's edge list is the undirected contact subgraph among
    positives; direction is not inferred.
    """
    if seed.status != CaseStatus.CONFIRMED_POSITIVE:
        raise ValueError("cluster discovery must start from a confirmed positive case")

    report = ClusterReport(seed=seed.device, confirmed={seed.device})
    tested: set[int] = {seed.device}
    frontier = [seed.device]
    while frontier:
        report.rounds += 1
        next_frontier = []
        for device in sorted(frontier):
            query = graph.contacts_of(device, now, lookback)
            for exposure, assessment in query.exposures:
                other = exposure.device
                if assessment.action == ACTION_NONE:
                    if assessment.score > 0.0 and other not in tested:
                        report.notified.add(other)
                    continue
                if other in tested:
                    continue
                tested.add(other)
                try:
                    positive = bool(oracle(other))
                except Exception:
                    report.incomplete = True
                    report.notified -= tested
                    _attach_edges(report, graph, now, lookback)
                    return report
                if positive:
                    report.confirmed.add(other)
                    next_frontier.append(other)
                else:
                    report.negatives.add(other)
        frontier = next_frontier
    report.notified -= tested
    _attach_edges(report, graph, now, lookback)
    return report


def _attach_edges(
    report: ClusterReport, graph: ContactGraph, now: float, lookback: float
) -> None:
    window_start = now - lookback
    members = sorted(report.confirmed)
    edges = []
    for i, a in enumerate(members):
        for b in members[i + 1 :]:
            exposure = graph.pair_exposure_in_window(a, b, window_start, now)
            if exposure.seconds_immediate > 0.0 or exposure.seconds_near > 0.0:
                edges.append(
                    {
                        "a": a,
                        "b": b,
                        "seconds_immediate": exposure.seconds_immediate,
                        "seconds_near": exposure.seconds_near,
                    }
                )
    report.edges = edges


# -- line-delimited JSON contact logs ---------------------------------------


def load_contact_log(path: str | Path) -> Iterator[ContactEvent | BeaconEvent]:
    """Parse a line-delimited JSON contact log.

    Contact lines: {"type":"contact","a":,"b":,"start":,"dur":,"prox":}
    Beacon lines:  {"type":"beacon","dev":,"beacon":,"time":,"dwell":}
    """
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON") from exc
            kind = record.get("type")
            if kind == "contact":
                yield ContactEvent(
                    device_a=int(record["a"]),
                    device_b=int(record["b"]),
                    start_time=float(record["start"]),
                    duration=float(record["dur"]),
                    proximity=str(record["prox"]),
                )
            elif kind == "beacon":
                yield BeaconEvent(
                    device=int(record["dev"]),
                    beacon=int(record["beacon"]),
                    time=float(record["time"]),
                    dwell=float(record["dwell"]),
                )
            else:
                raise ValueError(f"{path}:{lineno}: unknown record type {kind!r}")


def write_contact_log(
    path: str | Path, events: Iterable[ContactEvent | BeaconEvent]
) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for event in events:
            if isinstance(event, ContactEvent):
                record = {
                    "type": "contact",
                    "a": event.device_a,
                    "b": event.device_b,
                    "start": event.start_time,
                    "dur": event.duration,
                    "prox": event.proximity,
                }
            else:
                record = {
                    "type": "beacon",
                    "dev": event.device,
                    "beacon": event.beacon,
                    "time": event.time,
                    "dwell": event.dwell,
                }
            handle.write(json.dumps(record, sort_keys=True) + "\n")


def ingest_log(
    graph: ContactGraph, path: str | Path, auto_register_beacons: bool = True
) -> int:
    """Load a contact log into a graph; returns the number of events ingested.

    Log files carry no beacon registry, so beacons seen in the file are
    registered with a placeholder location unless auto-registration is
    disabled.
    """
    count = 0
    for event in load_contact_log(path):
        if (
            isinstance(event, BeaconEvent)
            and auto_register_beacons
            and not graph.knows_beacon(event.beacon)
        ):
            graph.register_beacon(event.beacon, "unknown-location")
        graph.ingest(event)
        count += 1
    return count


def bundled_fig1_path() -> Path:
    """Path of the bundled six-person demonstration scenario."""
    return Path(__file__).parent / "data" / "fig1.jsonl"
