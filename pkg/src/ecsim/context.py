"""Context pipeline: sensor signals are aggregated into events, events are
matched into activities, and recognized activities update per-user context
that can gate role adoption."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence, Union

from .model import ConditionKind, Point, ThingId, Trigger

ACTIVITY_KEY = "activity"


class Provenance(str, Enum):
    SENSED = "sensed"
    INFERRED = "inferred"


class Aggregate(str, Enum):
    MEAN = "mean"
    MAX = "max"
    DELTA = "delta"
    INSIDE_REGION = "inside_region"


@dataclass(frozen=True)
class Signal:
    """One sensor reading. Scalar sensors carry a float value; positional
    sensors carry an (x, y) point."""

    source: ThingId
    sensor: str
    timestamp: int
    value: Union[float, Point]


@dataclass(frozen=True)
class Event:
    tag: str
    timestamp: int
    window: tuple[int, int]
    evidence: tuple[Signal, ...] = ()


@dataclass(frozen=True)
class Activity:
    tag: str
    span: tuple[int, int]
    events: tuple[str, ...]


@dataclass(frozen=True)
class Statement:
    value: object
    timestamp: int
    provenance: Provenance


@dataclass(frozen=True)
class SensedStatement:
    """A directly observed context fact, e.g. a profile toggle or a reading
    pushed by a device on the user's behalf."""

    key: str
    value: object
    timestamp: int


@dataclass(frozen=True)
class ContextState:
    user: str
    statements: Mapping[str, Statement] = field(default_factory=dict)
    profile: Mapping[str, object] = field(default_factory=dict)


@dataclass(frozen=True)
class Rect:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def contains(self, point: Point) -> bool:
        x, y = point
        return self.xmin <= x <= self.xmax and self.ymin <= y <= self.ymax


@dataclass(frozen=True)
class EventRule:
    """Tumbling-window aggregation over one sensor stream.

    Windows are [k*window_ms, (k+1)*window_ms), aligned to t=0; a window is
    evaluated once the stream has a reading at or past its end. The event
    fires on the rising edge of the predicate (threshold crossed, or the
    window's last position moving inside the region) so a sustained
    condition emits once, not per window.
    """

    sensor: str
    window_ms: int
    aggregate: Aggregate
    emit: str
    threshold: float | None = None
    region: Rect | None = None

    def __post_init__(self) -> None:
        if self.window_ms <= 0:
            raise ValueError("window_ms must be positive")
        if not self.emit:
            raise ValueError("emit tag must be nonempty")
        if self.aggregate is Aggregate.INSIDE_REGION:
            if self.region is None:
                raise ValueError("inside_region aggregate requires a region")
        elif self.threshold is None:
            raise ValueError(f"{self.aggregate.value} aggregate requires a threshold")


@dataclass(frozen=True)
class ActivityRule:
    """An activity is an in-order subsequence of event tags where consecutive
    matched events are at most max_gap_ms apart. Pattern elements are literal
    tags or "*"."""

    pattern: tuple[str, ...]
    max_gap_ms: int
    emit: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "pattern", tuple(self.pattern))
        if not self.pattern:
            raise ValueError("activity pattern must be nonempty")
        if self.max_gap_ms < 0:
            raise ValueError("max_gap_ms must be nonnegative")
        if not self.emit:
            raise ValueError("emit tag must be nonempty")


class MalformedStream(ValueError):
    """Raised when a per-(source, sensor) stream is not strictly increasing
    in timestamp."""


def _streams(stream: Sequence[Signal]) -> dict[tuple[ThingId, str], list[Signal]]:
    grouped: dict[tuple[ThingId, str], list[Signal]] = {}
    for sig in stream:
        grouped.setdefault((sig.source, sig.sensor), []).append(sig)
    for (source, sensor), sigs in grouped.items():
        for a, b in zip(sigs, sigs[1:]):
            if b.timestamp <= a.timestamp:
                raise MalformedStream(
                    f"stream ({source}, {sensor}) timestamps not strictly increasing"
                    f" at t={b.timestamp}"
                )
    return grouped


def _scalar(sig: Signal, rule: EventRule) -> float:
    if isinstance(sig.value, (int, float)) and not isinstance(sig.value, bool):
        return float(sig.value)
    raise ValueError(
        f"{rule.aggregate.value} aggregate needs scalar values on sensor {rule.sensor!r}"
    )


def _point(sig: Signal, rule: EventRule) -> Point:
    if isinstance(sig.value, (tuple, list)) and len(sig.value) == 2:
        return (float(sig.value[0]), float(sig.value[1]))
    raise ValueError(f"inside_region aggregate needs point values on sensor {rule.sensor!r}")


def _window_predicate(rule: EventRule, window_sigs: Sequence[Signal]) -> bool:
    if rule.aggregate is Aggregate.INSIDE_REGION:
        assert rule.region is not None
        return rule.region.contains(_point(window_sigs[-1], rule))
    values = [_scalar(s, rule) for s in window_sigs]
    assert rule.threshold is not None
    if rule.aggregate is Aggregate.MEAN:
        agg = sum(values) / len(values)
    elif rule.aggregate is Aggregate.MAX:
        agg = max(values)
    else:  # DELTA
        agg = values[-1] - values[0]
    return agg >= rule.threshold


def aggregate_signals(
    stream: Sequence[Signal], rules: Sequence[EventRule]
) -> list[Event]:
    """Evaluate every rule against every matching stream and return the
    emitted events ordered by timestamp.

    Deterministic: ties are broken by rule declaration order, then source id.
    Windows with no readings are skipped and leave the edge state unchanged.
    Feeding a longer stream never changes events whose timestamps the shorter
    stream had already covered.
    """
    grouped = _streams(stream)
    keyed: list[tuple[int, int, str, Event]] = []
    for rule_idx, rule in enumerate(rules):
        for source, sensor in sorted(grouped):
            if sensor != rule.sensor:
                continue
            sigs = grouped[(source, sensor)]
            max_ts = sigs[-1].timestamp
            W = rule.window_ms
            k = sigs[0].timestamp // W
            previously_inside = False
            i = 0
            while (k + 1) * W <= max_ts:
                start, end = k * W, (k + 1) * W
                window_sigs = []
                while i < len(sigs) and sigs[i].timestamp < end:
                    if sigs[i].timestamp >= start:
                        window_sigs.append(sigs[i])
                    i += 1
                if window_sigs:
                    inside = _window_predicate(rule, window_sigs)
                    if inside and not previously_inside:
                        keyed.append(
                            (
                                end,
                                rule_idx,
                                source,
                                Event(
                                    tag=rule.emit,
                                    timestamp=end,
                                    window=(start, end),
                                    evidence=tuple(window_sigs),
                                ),
                            )
                        )
                    previously_inside = inside
                k += 1
    keyed.sort(key=lambda item: item[:3])
    return [ev for _, _, _, ev in keyed]


def _pattern_matches(element: str, tag: str) -> bool:
    return element == "*" or element == tag


def _search_match(
    events: Sequence[Event], rule: ActivityRule, start_idx: int
) -> tuple[int, ...] | None:
    """Earliest match (lexicographically smallest index tuple) of the rule's
    pattern as a subsequence of events[start_idx:], honoring the gap bound
    between consecutive matched events. Backtracking, since taking the
    nearest candidate for one element can starve the next."""

    pattern = rule.pattern

    def extend(prefix: list[int], next_elem: int, from_idx: int) -> tuple[int, ...] | None:
        if next_elem == len(pattern):
            return tuple(prefix)
        for j in range(from_idx, len(events)):
            if prefix:
                gap = events[j].timestamp - events[prefix[-1]].timestamp
                if gap > rule.max_gap_ms:
                    break  # events are time-ordered, later ones only widen the gap
            if _pattern_matches(pattern[next_elem], events[j].tag):
                prefix.append(j)
                found = extend(prefix, next_elem + 1, j + 1)
                if found is not None:
                    return found
                prefix.pop()
        return None

    for first in range(start_idx, len(events)):
        if _pattern_matches(pattern[0], events[first].tag):
            found = extend([first], 1, first + 1)
            if found is not None:
                return found
    return None


def _overlaps(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return not (a[1] < b[0] or b[1] < a[0])


def infer_activity(
    events: Sequence[Event],
    rules: Sequence[ActivityRule],
    *,
    pinned: Sequence[Activity] = (),
) -> list[Activity]:
    """Match activity rules against a time-ordered event list.

    Candidates per rule never overlap each other; across rules, overlapping
    candidates are resolved in favor of the earlier start, then rule
    declaration order. `pinned` activities are treated as already selected:
    they block overlapping candidates and are not returned again, which lets
    a streaming caller keep previously committed recognitions stable.
    """
    events = sorted(events, key=lambda e: e.timestamp)
    candidates: list[tuple[int, int, int, Activity]] = []
    for rule_idx, rule in enumerate(rules):
        scan = 0
        while scan < len(events):
            match = _search_match(events, rule, scan)
            if match is None:
                break
            span = (events[match[0]].timestamp, events[match[-1]].timestamp)
            candidates.append(
                (
                    span[0],
                    rule_idx,
                    span[1],
                    Activity(
                        tag=rule.emit,
                        span=span,
                        events=tuple(events[j].tag for j in match),
                    ),
                )
            )
            # next match for this rule must start strictly after this span
            scan = next(
                (j for j in range(match[-1] + 1, len(events)) if events[j].timestamp > span[1]),
                len(events),
            )
    candidates.sort(key=lambda item: item[:3])
    selected_spans = [a.span for a in pinned]
    chosen: list[Activity] = []
    for _, _, _, activity in candidates:
        if any(_overlaps(activity.span, span) for span in selected_spans):
            continue
        selected_spans.append(activity.span)
        chosen.append(activity)
    return chosen


def update_context(
    ctx: ContextState, item: Union[Activity, SensedStatement]
) -> ContextState:
    """Fold one recognized activity or sensed fact into the context.

    Newer timestamps win; on a timestamp tie a sensed statement beats an
    inferred one, and otherwise the incoming statement replaces the old.
    """
    if isinstance(item, Activity):
        key = ACTIVITY_KEY
        incoming = Statement(item.tag, item.span[1], Provenance.INFERRED)
    else:
        key = item.key
        incoming = Statement(item.value, item.timestamp, Provenance.SENSED)

    current = ctx.statements.get(key)
    if current is not None:
        if incoming.timestamp < current.timestamp:
            return ctx
        if (
            incoming.timestamp == current.timestamp
            and incoming.provenance is Provenance.INFERRED
            and current.provenance is Provenance.SENSED
        ):
            return ctx
    statements = dict(ctx.statements)
    statements[key] = incoming
    return ContextState(user=ctx.user, statements=statements, profile=ctx.profile)


def conditions_from_context(ctx: ContextState) -> frozenset[Trigger]:
    """Triggers currently derivable from the context: one activity trigger
    per recognized-activity statement."""
    return frozenset(
        Trigger(ConditionKind.ACTIVITY_RECOGNIZED, str(st.value))
        for key, st in ctx.statements.items()
        if key == ACTIVITY_KEY
    )
