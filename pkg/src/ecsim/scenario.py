"""Scenario documents: the JSON input format for simulation runs.

load_scenario parses and cross-validates a document; serialize_scenario
produces JSON that loads back to an equal document, defaults included.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from .context import ActivityRule, Aggregate, EventRule, Rect
from .lifecycle import ConfigurationTemplate, Goal
from .model import (
    Condition,
    ConditionKind,
    Constraint,
    ConstraintKind,
    Direction,
    Environment,
    HasAttribute,
    MaxLatency,
    Necessity,
    PurposeTag,
    RequiresCapability,
    Role,
    ServiceSpec,
    SupportsProtocol,
    Thing,
    ThingId,
    WithinRadius,
    validate_role,
)

SCHEMA_VERSION = 1

ACTION_KINDS = ("request_role", "leave", "invoke_service")


class ParseError(Exception):
    """The file is not valid JSON; carries line and column."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class ValidationError(Exception):
    """The document parsed but violates the scenario schema; carries every
    problem found, each prefixed with its document path."""

    def __init__(self, problems: Sequence[str]):
        super().__init__("\n".join(problems))
        self.problems = list(problems)


@dataclass(frozen=True)
class SimParams:
    seed: int = 0
    default_latency_ms: int = 10
    drop_probability: float = 0.0
    latency_overrides: tuple[tuple[ThingId, ThingId, int], ...] = ()
    handshake_timeout_ms: int = 2000
    auction_deadline_ms: int = 1000


@dataclass(frozen=True)
class ScriptSpec:
    """Per-thing behavior: answers to offers, bids by subject, reactions to
    recognized activities, service handler payloads, result policies, and a
    timed action list."""

    on_offer: Mapping[str, str] = field(default_factory=dict)
    bids: Mapping[str, float] = field(default_factory=dict)
    on_activity: Mapping[str, tuple[Mapping[str, Any], ...]] = field(default_factory=dict)
    on_service: Mapping[str, Mapping[str, Any]] = field(default_factory=dict)
    on_result: Mapping[str, Mapping[str, Any]] = field(default_factory=dict)
    actions: tuple[Mapping[str, Any], ...] = ()


@dataclass(frozen=True)
class ThingSpec:
    id: ThingId
    capabilities: frozenset[str]
    attributes: Mapping[str, Any]
    script: ScriptSpec = field(default_factory=ScriptSpec)

    def build(self) -> Thing:
        return Thing(
            id=self.id,
            capabilities=frozenset(self.capabilities),
            attributes=dict(self.attributes),
        )


@dataclass(frozen=True)
class TimedGoal:
    at_ms: int
    goal: Goal


@dataclass(frozen=True)
class TimedSignal:
    at_ms: int
    thing: ThingId
    sensor: str
    value: Any


@dataclass(frozen=True)
class TimedMove:
    at_ms: int
    thing: ThingId
    to: tuple[float, float]


@dataclass(frozen=True)
class TimedCommand:
    at_ms: int
    user: str
    thing: ThingId
    command: str


@dataclass(frozen=True)
class ScenarioDoc:
    name: str
    schema_version: int = SCHEMA_VERSION
    sim: SimParams = field(default_factory=SimParams)
    services: tuple[str, ...] = ()
    things: tuple[ThingSpec, ...] = ()
    roles: tuple[Role, ...] = ()
    templates: tuple[ConfigurationTemplate, ...] = ()
    event_rules: tuple[EventRule, ...] = ()
    activity_rules: tuple[ActivityRule, ...] = ()
    goals: tuple[TimedGoal, ...] = ()
    signals: tuple[TimedSignal, ...] = ()
    moves: tuple[TimedMove, ...] = ()
    commands: tuple[TimedCommand, ...] = ()

    def build_world(self) -> dict[ThingId, Thing]:
        return {spec.id: spec.build() for spec in self.things}

    def role_by_name(self, name: str) -> Role:
        for role in self.roles:
            if role.name == name:
                return role
        raise KeyError(name)

    def thing_spec(self, thing_id: ThingId) -> ThingSpec:
        for spec in self.things:
            if spec.id == thing_id:
                return spec
        raise KeyError(thing_id)


TOP_LEVEL_KEYS = {
    "schema_version",
    "name",
    "sim",
    "services",
    "things",
    "roles",
    "templates",
    "event_rules",
    "activity_rules",
    "goals",
    "signals",
    "moves",
    "commands",
}


def _is_num(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _is_int(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_point(v: Any) -> bool:
    return isinstance(v, (list, tuple)) and len(v) == 2 and all(_is_num(c) for c in v)


class _Checker:
    def __init__(self) -> None:
        self.problems: list[str] = []

    def add(self, path: str, message: str) -> None:
        self.problems.append(f"{path}: {message}")

    def str_field(self, obj: Mapping, key: str, path: str, *, required: bool = True) -> str | None:
        v = obj.get(key)
        if v is None:
            if required:
                self.add(path, f"missing {key!r}")
            return None
        if not isinstance(v, str) or not v:
            self.add(path, f"{key!r} must be a nonempty string")
            return None
        return v

    def int_field(
        self, obj: Mapping, key: str, path: str, *, minimum: int | None = None, default: int | None = None
    ) -> int | None:
        v = obj.get(key, default)
        if v is None:
            self.add(path, f"missing {key!r}")
            return None
        if not _is_int(v):
            self.add(path, f"{key!r} must be an integer")
            return None
        if minimum is not None and v < minimum:
            self.add(path, f"{key!r} must be >= {minimum}")
            return None
        return v


def _parse_condition(raw: Any, path: str, check: _Checker) -> Condition | None:
    if not isinstance(raw, Mapping):
        check.add(path, "must be an object with kind and pattern")
        return None
    kind = check.str_field(raw, "kind", path)
    pattern = check.str_field(raw, "pattern", path)
    if kind is None or pattern is None:
        return None
    try:
        return Condition(ConditionKind(kind), pattern)
    except ValueError:
        check.add(path, f"unknown condition kind {kind!r}")
        return None


def _parse_constraint(raw: Any, path: str, services: set[str], check: _Checker) -> Constraint | None:
    if not isinstance(raw, Mapping):
        check.add(path, "must be an object with a 'kind'")
        return None
    kind = check.str_field(raw, "kind", path)
    if kind is None:
        return None
    if kind == "within_radius":
        center = raw.get("center")
        radius = raw.get("radius")
        if not _is_point(center) or not _is_num(radius):
            check.add(path, "within_radius needs center [x, y] and numeric radius")
            return None
        return WithinRadius(center=(float(center[0]), float(center[1])), radius=float(radius))
    if kind == "has_attribute":
        key = check.str_field(raw, "key", path)
        if key is None or "value" not in raw:
            check.add(path, "has_attribute needs key and value")
            return None
        return HasAttribute(key=key, value=raw["value"])
    if kind == "supports_protocol":
        name = check.str_field(raw, "name", path)
        if name is None:
            return None
        return SupportsProtocol(name=name)
    if kind == "max_latency":
        ms = raw.get("ms")
        if not _is_num(ms):
            check.add(path, "max_latency needs numeric ms")
            return None
        return MaxLatency(ms=float(ms))
    if kind == "requires_capability":
        type_id = check.str_field(raw, "type_id", path)
        if type_id is None:
            return None
        if type_id not in services:
            check.add(path, f"requires_capability names unknown service {type_id!r}")
            return None
        klass = raw.get("constraint_class", "virtual")
        if klass not in ("virtual", "physical"):
            check.add(path, f"constraint_class must be 'virtual' or 'physical', got {klass!r}")
            return None
        return RequiresCapability(type_id=type_id, kind=ConstraintKind(klass))
    check.add(path, f"unknown constraint kind {kind!r}")
    return None


def _parse_script(raw: Any, path: str, check: _Checker) -> ScriptSpec:
    if raw is None:
        return ScriptSpec()
    if not isinstance(raw, Mapping):
        check.add(path, "script must be an object")
        return ScriptSpec()

    on_offer: dict[str, str] = {}
    for role, answer in (raw.get("on_offer") or {}).items():
        if answer not in ("accept", "decline"):
            check.add(f"{path}.on_offer[{role!r}]", f"answer must be 'accept' or 'decline', got {answer!r}")
        else:
            on_offer[role] = answer

    bids: dict[str, float] = {}
    for subject, value in (raw.get("bids") or {}).items():
        if not _is_num(value):
            check.add(f"{path}.bids[{subject!r}]", "bid value must be a number")
        else:
            bids[subject] = float(value)

    def action_list(items: Any, apath: str, timed: bool) -> tuple[Mapping[str, Any], ...]:
        out = []
        if not isinstance(items, list):
            check.add(apath, "must be a list of actions")
            return ()
        for i, item in enumerate(items):
            ipath = f"{apath}[{i}]"
            if not isinstance(item, Mapping):
                check.add(ipath, "action must be an object")
                continue
            kind = item.get("action")
            if kind not in ACTION_KINDS:
                check.add(ipath, f"action must be one of {ACTION_KINDS}, got {kind!r}")
                continue
            if timed:
                at = item.get("at_ms")
                if not _is_int(at) or at < 0:
                    check.add(ipath, "at_ms must be a nonnegative integer")
                    continue
            if kind == "request_role" and not isinstance(item.get("role"), str):
                check.add(ipath, "request_role needs a 'role'")
                continue
            if kind == "invoke_service" and not isinstance(item.get("service"), str):
                check.add(ipath, "invoke_service needs a 'service'")
                continue
            out.append(dict(item))
        return tuple(out)

    on_activity: dict[str, tuple[Mapping[str, Any], ...]] = {}
    for tag, items in (raw.get("on_activity") or {}).items():
        on_activity[tag] = action_list(items, f"{path}.on_activity[{tag!r}]", timed=False)

    on_service = {}
    for svc, payload in (raw.get("on_service") or {}).items():
        if not isinstance(payload, Mapping):
            check.add(f"{path}.on_service[{svc!r}]", "handler payload must be an object")
        else:
            on_service[svc] = dict(payload)

    on_result = {}
    for svc, policy in (raw.get("on_result") or {}).items():
        if not isinstance(policy, Mapping):
            check.add(f"{path}.on_result[{svc!r}]", "result policy must be an object")
        else:
            on_result[svc] = dict(policy)

    actions = action_list(raw.get("actions") or [], f"{path}.actions", timed=True)

    return ScriptSpec(
        on_offer=on_offer,
        bids=bids,
        on_activity=on_activity,
        on_service=on_service,
        on_result=on_result,
        actions=actions,
    )


def from_dict(data: Any) -> ScenarioDoc:
    """Build a ScenarioDoc from parsed JSON, collecting every schema problem
    before raising ValidationError."""
    check = _Checker()
    if not isinstance(data, Mapping):
        raise ValidationError(["$: document must be a JSON object"])

    for key in data:
        if key not in TOP_LEVEL_KEYS:
            check.add("$", f"unknown key {key!r}")

    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        check.add("$.schema_version", f"expected {SCHEMA_VERSION}, got {version!r}")
    name = check.str_field(data, "name", "$") or "unnamed"

    # sim parameters
    raw_sim = data.get("sim") or {}
    sim = SimParams()
    if not isinstance(raw_sim, Mapping):
        check.add("$.sim", "must be an object")
    else:
        seed = check.int_field(raw_sim, "seed", "$.sim", default=0)
        lat = check.int_field(raw_sim, "default_latency_ms", "$.sim", minimum=0, default=10)
        drop = raw_sim.get("drop_probability", 0.0)
        if not _is_num(drop) or not (0.0 <= drop <= 1.0):
            check.add("$.sim.drop_probability", "must be a number in [0, 1]")
            drop = 0.0
        handshake = check.int_field(raw_sim, "handshake_timeout_ms", "$.sim", minimum=1, default=2000)
        deadline = check.int_field(raw_sim, "auction_deadline_ms", "$.sim", minimum=1, default=1000)
        overrides: list[tuple[str, str, int]] = []
        for i, entry in enumerate(raw_sim.get("latency_overrides") or []):
            opath = f"$.sim.latency_overrides[{i}]"
            if not isinstance(entry, Mapping):
                check.add(opath, "must be an object")
                continue
            sender = check.str_field(entry, "sender", opath)
            to = check.str_field(entry, "to", opath)
            ms = check.int_field(entry, "ms", opath, minimum=0)
            if sender and to and ms is not None:
                overrides.append((sender, to, ms))
        sim = SimParams(
            seed=seed if seed is not None else 0,
            default_latency_ms=lat if lat is not None else 10,
            drop_probability=float(drop),
            latency_overrides=tuple(overrides),
            handshake_timeout_ms=handshake if handshake is not None else 2000,
            auction_deadline_ms=deadline if deadline is not None else 1000,
        )

    # service universe
    services: list[str] = []
    raw_services = data.get("services", [])
    if not isinstance(raw_services, list):
        check.add("$.services", "must be a list of service type ids")
    else:
        for i, svc in enumerate(raw_services):
            if not isinstance(svc, str) or not svc:
                check.add(f"$.services[{i}]", "must be a nonempty string")
            elif svc in services:
                check.add(f"$.services[{i}]", f"duplicate service id {svc!r}")
            else:
                services.append(svc)
    service_set = set(services)

    # things
    things: list[ThingSpec] = []
    thing_ids: set[str] = set()
    raw_things = data.get("things", [])
    if not isinstance(raw_things, list) or not raw_things:
        check.add("$.things", "must be a nonempty list")
        raw_things = []
    for i, raw in enumerate(raw_things):
        tpath = f"$.things[{i}]"
        if not isinstance(raw, Mapping):
            check.add(tpath, "must be an object")
            continue
        tid = check.str_field(raw, "id", tpath)
        if tid is None:
            continue
        if tid in thing_ids:
            check.add(tpath, f"duplicate thing id {tid!r}")
            continue
        thing_ids.add(tid)
        caps: set[str] = set()
        for j, cap in enumerate(raw.get("capabilities") or []):
            if not isinstance(cap, str) or cap not in service_set:
                check.add(f"{tpath}.capabilities[{j}]", f"unknown service id {cap!r}")
            else:
                caps.add(cap)
        attrs = raw.get("attributes")
        if not isinstance(attrs, Mapping):
            check.add(tpath, "missing 'attributes' object")
            attrs = {}
        else:
            if not _is_point(attrs.get("location")):
                check.add(f"{tpath}.attributes.location", "must be [x, y]")
            if not isinstance(attrs.get("platform"), str):
                check.add(f"{tpath}.attributes.platform", "must be a string")
            protocols = attrs.get("protocols")
            if not isinstance(protocols, list) or not all(isinstance(p, str) for p in protocols):
                check.add(f"{tpath}.attributes.protocols", "must be a list of strings")
        script = _parse_script(raw.get("script"), f"{tpath}.script", check)
        attrs = dict(attrs)
        if _is_point(attrs.get("location")):
            attrs["location"] = (float(attrs["location"][0]), float(attrs["location"][1]))
        things.append(
            ThingSpec(id=tid, capabilities=frozenset(caps), attributes=attrs, script=script)
        )

    # roles
    roles: list[Role] = []
    role_names: set[str] = set()
    for i, raw in enumerate(data.get("roles") or []):
        rpath = f"$.roles[{i}]"
        if not isinstance(raw, Mapping):
            check.add(rpath, "must be an object")
            continue
        rname = check.str_field(raw, "name", rpath)
        if rname is None:
            continue
        if rname in role_names:
            check.add(rpath, f"duplicate role name {rname!r}")
            continue
        role_names.add(rname)
        compulsory = raw.get("compulsory")
        if not isinstance(compulsory, bool):
            check.add(rpath, "'compulsory' must be a boolean")
            compulsory = False
        specs: list[ServiceSpec] = []
        for j, rawspec in enumerate(raw.get("services") or []):
            spath = f"{rpath}.services[{j}]"
            if not isinstance(rawspec, Mapping):
                check.add(spath, "must be an object")
                continue
            type_id = check.str_field(rawspec, "type_id", spath)
            if type_id is None:
                continue
            if type_id not in service_set:
                check.add(spath, f"unknown service id {type_id!r}")
                continue
            direction = rawspec.get("direction")
            if direction not in ("provided", "expected"):
                check.add(spath, f"direction must be 'provided' or 'expected', got {direction!r}")
                continue
            necessity = rawspec.get("necessity", "mandatory")
            if necessity not in ("mandatory", "optional"):
                check.add(spath, f"necessity must be 'mandatory' or 'optional', got {necessity!r}")
                continue
            proximity = rawspec.get("requires_proximity", True)
            if not isinstance(proximity, bool):
                check.add(spath, "requires_proximity must be a boolean")
                continue
            specs.append(
                ServiceSpec(
                    type_id=type_id,
                    direction=Direction(direction),
                    necessity=Necessity(necessity),
                    requires_proximity=proximity,
                )
            )
        conditions: list[Condition] = []
        table: dict[Condition, str] = {}
        for j, rawinv in enumerate(raw.get("invocations") or []):
            ipath = f"{rpath}.invocations[{j}]"
            if not isinstance(rawinv, Mapping):
                check.add(ipath, "must be an object")
                continue
            cond = _parse_condition(rawinv, ipath, check)
            service = check.str_field(rawinv, "service", ipath)
            if cond is None or service is None:
                continue
            if cond in table:
                check.add(ipath, "duplicate condition in invocation table")
                continue
            conditions.append(cond)
            table[cond] = service
        precondition = None
        if raw.get("precondition") is not None:
            precondition = _parse_condition(raw["precondition"], f"{rpath}.precondition", check)
        max_instances = raw.get("max_instances")
        if max_instances is not None and (not _is_int(max_instances) or max_instances < 1):
            check.add(rpath, "max_instances must be a positive integer or null")
            max_instances = None
        role = Role(
            name=rname,
            compulsory=compulsory,
            services=tuple(specs),
            conditions=frozenset(conditions),
            invocation_table=table,
            precondition=precondition,
            max_instances=max_instances,
        )
        report = validate_role(role)
        for violation in report.violations:
            check.add(rpath, f"{violation.code}: {violation.detail}")
        roles.append(role)
    roles_by_name = {r.name: r for r in roles}

    # templates
    templates: list[ConfigurationTemplate] = []
    for i, raw in enumerate(data.get("templates") or []):
        tpath = f"$.templates[{i}]"
        if not isinstance(raw, Mapping):
            check.add(tpath, "must be an object")
            continue
        rawpurpose = raw.get("purpose")
        if not isinstance(rawpurpose, Mapping):
            check.add(tpath, "missing 'purpose' object")
            continue
        tag = check.str_field(rawpurpose, "tag", f"{tpath}.purpose")
        reqcaps: set[str] = set()
        for j, cap in enumerate(rawpurpose.get("required_capabilities") or []):
            if not isinstance(cap, str) or cap not in service_set:
                check.add(f"{tpath}.purpose.required_capabilities[{j}]", f"unknown service id {cap!r}")
            else:
                reqcaps.add(cap)
        member_roles: list[Role] = []
        for j, rn in enumerate(raw.get("roles") or []):
            if rn not in roles_by_name:
                check.add(f"{tpath}.roles[{j}]", f"unknown role {rn!r}")
            else:
                member_roles.append(roles_by_name[rn])
        constraints: list[Constraint] = []
        for j, rawc in enumerate(raw.get("environment") or []):
            c = _parse_constraint(rawc, f"{tpath}.environment[{j}]", service_set, check)
            if c is not None:
                constraints.append(c)
        flags = {}
        for key in ("assign_by_auction", "offer_on_entry", "allow_multi_role", "decentralized"):
            v = raw.get(key, False)
            if not isinstance(v, bool):
                check.add(tpath, f"{key!r} must be a boolean")
                v = False
            flags[key] = v
        if tag is None or not member_roles:
            check.add(tpath, "template needs a purpose tag and at least one role")
            continue
        if not flags["decentralized"] and not any(r.compulsory for r in member_roles):
            check.add(tpath, "no compulsory role; set 'decentralized' if intended")
            continue
        templates.append(
            ConfigurationTemplate(
                purpose=PurposeTag(tag=tag, required_capabilities=frozenset(reqcaps)),
                roles=tuple(member_roles),
                environment=Environment(tuple(constraints)),
                assign_by_auction=flags["assign_by_auction"],
                offer_on_entry=flags["offer_on_entry"],
                allow_multi_role=flags["allow_multi_role"],
                decentralized=flags["decentralized"],
            )
        )

    # context rules
    event_rules: list[EventRule] = []
    event_tags: set[str] = set()
    for i, raw in enumerate(data.get("event_rules") or []):
        epath = f"$.event_rules[{i}]"
        if not isinstance(raw, Mapping):
            check.add(epath, "must be an object")
            continue
        sensor = check.str_field(raw, "sensor", epath)
        emit = check.str_field(raw, "emit", epath)
        window = check.int_field(raw, "window_ms", epath, minimum=1)
        agg = raw.get("aggregate")
        if agg not in tuple(a.value for a in Aggregate):
            check.add(epath, f"unknown aggregate {agg!r}")
            continue
        threshold = raw.get("threshold")
        if threshold is not None and not _is_num(threshold):
            check.add(epath, "threshold must be a number")
            continue
        region = None
        rawregion = raw.get("region")
        if rawregion is not None:
            if not isinstance(rawregion, Mapping) or not all(
                _is_num(rawregion.get(k)) for k in ("xmin", "ymin", "xmax", "ymax")
            ):
                check.add(f"{epath}.region", "must be an object with xmin, ymin, xmax, ymax")
                continue
            region = Rect(
                xmin=float(rawregion["xmin"]),
                ymin=float(rawregion["ymin"]),
                xmax=float(rawregion["xmax"]),
                ymax=float(rawregion["ymax"]),
            )
        if sensor is None or emit is None or window is None:
            continue
        try:
            rule = EventRule(
                sensor=sensor,
                window_ms=window,
                aggregate=Aggregate(agg),
                emit=emit,
                threshold=float(threshold) if threshold is not None else None,
                region=region,
            )
        except ValueError as exc:
            check.add(epath, str(exc))
            continue
        event_rules.append(rule)
        event_tags.add(emit)

    activity_rules: list[ActivityRule] = []
    activity_tags: set[str] = set()
    for i, raw in enumerate(data.get("activity_rules") or []):
        apath = f"$.activity_rules[{i}]"
        if not isinstance(raw, Mapping):
            check.add(apath, "must be an object")
            continue
        emit = check.str_field(raw, "emit", apath)
        gap = check.int_field(raw, "max_gap_ms", apath, minimum=0)
        pattern = raw.get("pattern")
        if not isinstance(pattern, list) or not pattern or not all(isinstance(p, str) and p for p in pattern):
            check.add(apath, "pattern must be a nonempty list of tags")
            continue
        for j, p in enumerate(pattern):
            if p != "*" and p not in event_tags:
                check.add(f"{apath}.pattern[{j}]", f"no event rule emits {p!r}")
        if emit is None or gap is None:
            continue
        activity_rules.append(ActivityRule(pattern=tuple(pattern), max_gap_ms=gap, emit=emit))
        activity_tags.add(emit)

    # timed items
    goals: list[TimedGoal] = []
    for i, raw in enumerate(data.get("goals") or []):
        gpath = f"$.goals[{i}]"
        if not isinstance(raw, Mapping):
            check.add(gpath, "must be an object")
            continue
        at = check.int_field(raw, "at_ms", gpath, minimum=0)
        user = check.str_field(raw, "user", gpath)
        tag = check.str_field(raw, "tag", gpath)
        caps: set[str] = set()
        rawcaps = raw.get("required_capabilities")
        if not isinstance(rawcaps, list) or not rawcaps:
            check.add(gpath, "required_capabilities must be a nonempty list")
            continue
        ok = True
        for j, cap in enumerate(rawcaps):
            if not isinstance(cap, str) or cap not in service_set:
                check.add(f"{gpath}.required_capabilities[{j}]", f"unknown service id {cap!r}")
                ok = False
            else:
                caps.add(cap)
        if at is None or user is None or tag is None or not ok:
            continue
        goals.append(TimedGoal(at_ms=at, goal=Goal(user=user, tag=tag, required_capabilities=frozenset(caps))))

    signals: list[TimedSignal] = []
    last_ts: dict[tuple[str, str], int] = {}
    for i, raw in enumerate(data.get("signals") or []):
        spath = f"$.signals[{i}]"
        if not isinstance(raw, Mapping):
            check.add(spath, "must be an object")
            continue
        at = check.int_field(raw, "at_ms", spath, minimum=0)
        tid = check.str_field(raw, "thing", spath)
        sensor = check.str_field(raw, "sensor", spath)
        value = raw.get("value")
        if at is None or tid is None or sensor is None:
            continue
        if tid not in thing_ids:
            check.add(spath, f"unknown thing {tid!r}")
            continue
        if not (_is_num(value) or _is_point(value)):
            check.add(spath, "value must be a number or [x, y]")
            continue
        key = (tid, sensor)
        if key in last_ts and at <= last_ts[key]:
            check.add(spath, f"stream ({tid}, {sensor}) timestamps must be strictly increasing")
            continue
        last_ts[key] = at
        if _is_point(value):
            value = (float(value[0]), float(value[1]))
        else:
            value = float(value)
        signals.append(TimedSignal(at_ms=at, thing=tid, sensor=sensor, value=value))

    moves: list[TimedMove] = []
    for i, raw in enumerate(data.get("moves") or []):
        mpath = f"$.moves[{i}]"
        if not isinstance(raw, Mapping):
            check.add(mpath, "must be an object")
            continue
        at = check.int_field(raw, "at_ms", mpath, minimum=0)
        tid = check.str_field(raw, "thing", mpath)
        to = raw.get("to")
        if at is None or tid is None:
            continue
        if tid not in thing_ids:
            check.add(mpath, f"unknown thing {tid!r}")
            continue
        if not _is_point(to):
            check.add(mpath, "'to' must be [x, y]")
            continue
        moves.append(TimedMove(at_ms=at, thing=tid, to=(float(to[0]), float(to[1]))))

    commands: list[TimedCommand] = []
    for i, raw in enumerate(data.get("commands") or []):
        cpath = f"$.commands[{i}]"
        if not isinstance(raw, Mapping):
            check.add(cpath, "must be an object")
            continue
        at = check.int_field(raw, "at_ms", cpath, minimum=0)
        user = check.str_field(raw, "user", cpath)
        tid = check.str_field(raw, "thing", cpath)
        command = check.str_field(raw, "command", cpath)
        if at is None or user is None or tid is None or command is None:
            continue
        if tid not in thing_ids:
            check.add(cpath, f"unknown thing {tid!r}")
            continue
        commands.append(TimedCommand(at_ms=at, user=user, thing=tid, command=command))

    # script cross-references need the final universes
    for i, spec in enumerate(things):
        spath = f"$.things[{i}].script"
        for role in spec.script.on_offer:
            if role not in role_names:
                check.add(f"{spath}.on_offer", f"unknown role {role!r}")
        for subject in spec.script.bids:
            if subject not in role_names and subject not in service_set:
                check.add(f"{spath}.bids", f"subject {subject!r} is neither a role nor a service")
        for tag, actions in spec.script.on_activity.items():
            if tag not in activity_tags:
                check.add(f"{spath}.on_activity", f"no activity rule emits {tag!r}")
            for action in actions:
                if action["action"] == "request_role" and action["role"] not in role_names:
                    check.add(f"{spath}.on_activity[{tag!r}]", f"unknown role {action['role']!r}")
                if action["action"] == "invoke_service" and action["service"] not in service_set:
                    check.add(f"{spath}.on_activity[{tag!r}]", f"unknown service {action['service']!r}")
        for svc in list(spec.script.on_service) + list(spec.script.on_result):
            if svc not in service_set:
                check.add(spath, f"unknown service {svc!r} in handler table")
        for action in spec.script.actions:
            if action["action"] == "request_role" and action["role"] not in role_names:
                check.add(f"{spath}.actions", f"unknown role {action['role']!r}")
            if action["action"] == "invoke_service" and action["service"] not in service_set:
                check.add(f"{spath}.actions", f"unknown service {action['service']!r}")

    for sender, to, _ in sim.latency_overrides:
        if sender not in thing_ids or to not in thing_ids:
            check.add("$.sim.latency_overrides", f"unknown thing in override ({sender!r}, {to!r})")

    if check.problems:
        raise ValidationError(check.problems)

    return ScenarioDoc(
        name=name,
        schema_version=SCHEMA_VERSION,
        sim=sim,
        services=tuple(services),
        things=tuple(things),
        roles=tuple(roles),
        templates=tuple(templates),
        event_rules=tuple(event_rules),
        activity_rules=tuple(activity_rules),
        goals=tuple(goals),
        signals=tuple(signals),
        moves=tuple(moves),
        commands=tuple(commands),
    )


def load_scenario(path: str | Path) -> ScenarioDoc:
    """Read, parse, and validate a scenario file."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, exc.colno) from exc
    return from_dict(data)


def _condition_dict(cond: Condition) -> dict:
    return {"kind": cond.kind.value, "pattern": cond.pattern}


def _constraint_dict(c: Constraint) -> dict:
    if isinstance(c, WithinRadius):
        return {"kind": "within_radius", "center": list(c.center), "radius": c.radius}
    if isinstance(c, HasAttribute):
        return {"kind": "has_attribute", "key": c.key, "value": c.value}
    if isinstance(c, SupportsProtocol):
        return {"kind": "supports_protocol", "name": c.name}
    if isinstance(c, MaxLatency):
        return {"kind": "max_latency", "ms": c.ms}
    return {
        "kind": "requires_capability",
        "type_id": c.type_id,
        "constraint_class": c.kind.value,
    }


def to_dict(doc: ScenarioDoc) -> dict:
    """JSON-ready form with defaults materialized; loads back equal."""

    def attrs_dict(attrs: Mapping[str, Any]) -> dict:
        out = dict(attrs)
        if isinstance(out.get("location"), tuple):
            out["location"] = list(out["location"])
        return out

    def script_dict(script: ScriptSpec) -> dict:
        return {
            "on_offer": dict(script.on_offer),
            "bids": dict(script.bids),
            "on_activity": {k: [dict(a) for a in v] for k, v in script.on_activity.items()},
            "on_service": {k: dict(v) for k, v in script.on_service.items()},
            "on_result": {k: dict(v) for k, v in script.on_result.items()},
            "actions": [dict(a) for a in script.actions],
        }

    def role_dict(role: Role) -> dict:
        ordered = sorted(role.invocation_table, key=lambda c: (c.kind.value, c.pattern))
        return {
            "name": role.name,
            "compulsory": role.compulsory,
            "services": [
                {
                    "type_id": s.type_id,
                    "direction": s.direction.value,
                    "necessity": s.necessity.value,
                    "requires_proximity": s.requires_proximity,
                }
                for s in role.services
            ],
            "invocations": [
                {**_condition_dict(c), "service": role.invocation_table[c]} for c in ordered
            ],
            "precondition": _condition_dict(role.precondition) if role.precondition else None,
            "max_instances": role.max_instances,
        }

    def rule_dict(rule: EventRule) -> dict:
        region = None
        if rule.region is not None:
            region = {
                "xmin": rule.region.xmin,
                "ymin": rule.region.ymin,
                "xmax": rule.region.xmax,
                "ymax": rule.region.ymax,
            }
        return {
            "sensor": rule.sensor,
            "window_ms": rule.window_ms,
            "aggregate": rule.aggregate.value,
            "emit": rule.emit,
            "threshold": rule.threshold,
            "region": region,
        }

    return {
        "schema_version": doc.schema_version,
        "name": doc.name,
        "sim": {
            "seed": doc.sim.seed,
            "default_latency_ms": doc.sim.default_latency_ms,
            "drop_probability": doc.sim.drop_probability,
            "latency_overrides": [
                {"sender": s, "to": t, "ms": ms} for s, t, ms in doc.sim.latency_overrides
            ],
            "handshake_timeout_ms": doc.sim.handshake_timeout_ms,
            "auction_deadline_ms": doc.sim.auction_deadline_ms,
        },
        "services": list(doc.services),
        "things": [
            {
                "id": t.id,
                "capabilities": sorted(t.capabilities),
                "attributes": attrs_dict(t.attributes),
                "script": script_dict(t.script),
            }
            for t in doc.things
        ],
        "roles": [role_dict(r) for r in doc.roles],
        "templates": [
            {
                "purpose": {
                    "tag": t.purpose.tag,
                    "required_capabilities": sorted(t.purpose.required_capabilities),
                },
                "roles": [r.name for r in t.roles],
                "environment": [_constraint_dict(c) for c in t.environment.constraints],
                "assign_by_auction": t.assign_by_auction,
                "offer_on_entry": t.offer_on_entry,
                "allow_multi_role": t.allow_multi_role,
                "decentralized": t.decentralized,
            }
            for t in doc.templates
        ],
        "event_rules": [rule_dict(r) for r in doc.event_rules],
        "activity_rules": [
            {"pattern": list(r.pattern), "max_gap_ms": r.max_gap_ms, "emit": r.emit}
            for r in doc.activity_rules
        ],
        "goals": [
            {
                "at_ms": g.at_ms,
                "user": g.goal.user,
                "tag": g.goal.tag,
                "required_capabilities": sorted(g.goal.required_capabilities),
            }
            for g in doc.goals
        ],
        "signals": [
            {
                "at_ms": s.at_ms,
                "thing": s.thing,
                "sensor": s.sensor,
                "value": list(s.value) if isinstance(s.value, tuple) else s.value,
            }
            for s in doc.signals
        ],
        "moves": [{"at_ms": m.at_ms, "thing": m.thing, "to": list(m.to)} for m in doc.moves],
        "commands": [
            {"at_ms": c.at_ms, "user": c.user, "thing": c.thing, "command": c.command}
            for c in doc.commands
        ],
    }


def serialize_scenario(doc: ScenarioDoc) -> str:
    return json.dumps(to_dict(doc), indent=2, sort_keys=False) + "\n"
