"""Core types for role-based device configurations.

Things advertise capabilities, roles bundle services with activation
conditions, and a configuration binds role instances to concrete things
inside an environment described by constraints.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping, Union

ThingId = str
ServiceTypeId = str
Point = tuple[float, float]

REQUIRED_ATTRIBUTES = ("location", "platform", "protocols")

# Instance ids are "<role name>#<n>"; role names may not contain the separator.
INSTANCE_SEPARATOR = "#"


class Direction(str, Enum):
    PROVIDED = "provided"
    EXPECTED = "expected"


class Necessity(str, Enum):
    MANDATORY = "mandatory"
    OPTIONAL = "optional"


class ConditionKind(str, Enum):
    MESSAGE_RECEIVED = "message_received"
    EVENT_OBSERVED = "event_observed"
    ACTIVITY_RECOGNIZED = "activity_recognized"
    USER_COMMAND = "user_command"


class ConstraintKind(str, Enum):
    PHYSICAL = "physical"
    VIRTUAL = "virtual"


class Classification(str, Enum):
    CENTRALIZED = "Centralized"
    DECENTRALIZED = "Decentralized"
    HYBRID = "Hybrid"
    DEGENERATE = "Degenerate"


class ConfigState(str, Enum):
    FORMING = "Forming"
    OPERATIONAL = "Operational"
    DISSOLVED = "Dissolved"


WILDCARD = "*"


@dataclass(frozen=True)
class ServiceSpec:
    """One service a role provides or expects.

    requires_proximity marks services that only make sense for co-located
    things; a role whose provided specs include a non-proximity service can
    be adopted from outside the configuration environment.
    """

    type_id: ServiceTypeId
    direction: Direction
    necessity: Necessity = Necessity.MANDATORY
    requires_proximity: bool = True


@dataclass(frozen=True)
class Condition:
    """Activation condition: a trigger kind plus a payload pattern.

    The pattern is matched literally against the trigger tag; "*" matches
    any tag of the right kind.
    """

    kind: ConditionKind
    pattern: str

    def matches(self, trigger: "Trigger") -> bool:
        if self.kind is not trigger.kind:
            return False
        return self.pattern == WILDCARD or self.pattern == trigger.tag


@dataclass(frozen=True)
class Trigger:
    """A concrete occurrence a condition can match."""

    kind: ConditionKind
    tag: str


@dataclass(frozen=True)
class WithinRadius:
    center: Point
    radius: float
    kind: ConstraintKind = field(default=ConstraintKind.PHYSICAL, init=False)

    def satisfied_by(self, thing: "Thing") -> bool:
        loc = thing.location
        if loc is None:
            return False
        return math.dist(loc, self.center) <= self.radius


@dataclass(frozen=True)
class HasAttribute:
    key: str
    value: Any
    kind: ConstraintKind = field(default=ConstraintKind.PHYSICAL, init=False)

    def satisfied_by(self, thing: "Thing") -> bool:
        return thing.attributes.get(self.key) == self.value


@dataclass(frozen=True)
class SupportsProtocol:
    name: str
    kind: ConstraintKind = field(default=ConstraintKind.VIRTUAL, init=False)

    def satisfied_by(self, thing: "Thing") -> bool:
        return self.name in thing.protocols


@dataclass(frozen=True)
class MaxLatency:
    # Reads the thing attribute "latency_ms"; absent or non-numeric fails.
    ms: float
    kind: ConstraintKind = field(default=ConstraintKind.VIRTUAL, init=False)

    def satisfied_by(self, thing: "Thing") -> bool:
        value = thing.attributes.get("latency_ms")
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            return False
        return value <= self.ms


@dataclass(frozen=True)
class RequiresCapability:
    type_id: ServiceTypeId
    kind: ConstraintKind = ConstraintKind.VIRTUAL

    def satisfied_by(self, thing: "Thing") -> bool:
        return self.type_id in thing.capabilities


Constraint = Union[WithinRadius, HasAttribute, SupportsProtocol, MaxLatency, RequiresCapability]


@dataclass(frozen=True)
class Environment:
    """Conjunction of constraints; a thing is in the environment iff it
    satisfies every one of them. An empty conjunction admits everything."""

    constraints: tuple[Constraint, ...] = ()

    def satisfied_by(self, thing: "Thing") -> bool:
        return all(c.satisfied_by(thing) for c in self.constraints)


@dataclass
class Thing:
    """A device: identity, advertised capabilities, attributes, mailbox."""

    id: ThingId
    capabilities: frozenset[ServiceTypeId]
    attributes: dict[str, Any]
    mailbox: deque = field(default_factory=deque)

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("thing id must be nonempty")
        self.capabilities = frozenset(self.capabilities)
        missing = [k for k in REQUIRED_ATTRIBUTES if k not in self.attributes]
        if missing:
            raise ValueError(f"thing {self.id!r} missing attributes: {', '.join(missing)}")

    @property
    def location(self) -> Point | None:
        loc = self.attributes.get("location")
        if loc is None:
            return None
        return (float(loc[0]), float(loc[1]))

    @property
    def protocols(self) -> frozenset[str]:
        return frozenset(self.attributes.get("protocols", ()))

    @property
    def owner(self) -> str | None:
        return self.attributes.get("owner")


@dataclass(frozen=True)
class Role:
    """A named bundle of services with activation conditions.

    The invocation table maps each declared condition to the service it
    activates; validate_role checks totality and that images stay within
    the role's own services.
    """

    name: str
    compulsory: bool
    services: tuple[ServiceSpec, ...]
    conditions: frozenset[Condition] = frozenset()
    invocation_table: Mapping[Condition, ServiceTypeId] = field(default_factory=dict)
    precondition: Condition | None = None
    max_instances: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "services", tuple(self.services))
        object.__setattr__(self, "conditions", frozenset(self.conditions))
        object.__setattr__(self, "invocation_table", dict(self.invocation_table))

    @property
    def provided(self) -> tuple[ServiceSpec, ...]:
        return tuple(s for s in self.services if s.direction is Direction.PROVIDED)

    @property
    def expected(self) -> tuple[ServiceSpec, ...]:
        return tuple(s for s in self.services if s.direction is Direction.EXPECTED)

    @property
    def mandatory(self) -> tuple[ServiceSpec, ...]:
        return tuple(s for s in self.services if s.necessity is Necessity.MANDATORY)

    @property
    def optional(self) -> tuple[ServiceSpec, ...]:
        return tuple(s for s in self.services if s.necessity is Necessity.OPTIONAL)

    @property
    def provided_types(self) -> frozenset[ServiceTypeId]:
        return frozenset(s.type_id for s in self.provided)

    @property
    def expected_types(self) -> frozenset[ServiceTypeId]:
        return frozenset(s.type_id for s in self.expected)

    @property
    def remote_joinable(self) -> bool:
        return any(not s.requires_proximity for s in self.provided)

    def instance_cap(self, n_things: int) -> int:
        """Upper bound on simultaneous instances for matching purposes."""
        if self.max_instances is not None:
            return self.max_instances
        return 1 if self.compulsory else n_things


def instance_id(role_name: str, index: int) -> str:
    return f"{role_name}{INSTANCE_SEPARATOR}{index}"


def instance_role_name(instance: str) -> str:
    name, sep, _ = instance.rpartition(INSTANCE_SEPARATOR)
    if not sep:
        raise ValueError(f"malformed role instance id: {instance!r}")
    return name


@dataclass(frozen=True)
class PurposeTag:
    tag: str
    required_capabilities: frozenset[ServiceTypeId] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "required_capabilities", frozenset(self.required_capabilities)
        )


@dataclass
class Configuration:
    """A set of roles bound to things inside an environment."""

    config_id: str
    roles: tuple[Role, ...]
    things: set[ThingId]
    delta: dict[str, ThingId]
    purpose: PurposeTag
    environment: Environment
    state: ConfigState = ConfigState.FORMING

    def role_by_name(self, name: str) -> Role:
        for role in self.roles:
            if role.name == name:
                return role
        raise KeyError(f"no role named {name!r} in configuration {self.config_id}")

    def compulsory_roles(self) -> tuple[Role, ...]:
        return compulsory_roles(self.roles)

    def optional_roles(self) -> tuple[Role, ...]:
        return optional_roles(self.roles)

    def instances_of(self, role_name: str) -> dict[str, ThingId]:
        return {
            inst: tid
            for inst, tid in self.delta.items()
            if instance_role_name(inst) == role_name
        }

    def instances_held_by(self, thing_id: ThingId) -> tuple[str, ...]:
        return tuple(sorted(i for i, t in self.delta.items() if t == thing_id))

    def unmapped_compulsory(self) -> tuple[str, ...]:
        """Names of compulsory roles with no mapped instance."""
        return tuple(
            r.name for r in self.roles if r.compulsory and not self.instances_of(r.name)
        )

    def next_instance(self, role_name: str) -> str:
        taken = {
            int(inst.rpartition(INSTANCE_SEPARATOR)[2])
            for inst in self.instances_of(role_name)
        }
        n = 1
        while n in taken:
            n += 1
        return instance_id(role_name, n)


def compulsory_roles(roles: Iterable[Role]) -> tuple[Role, ...]:
    return tuple(r for r in roles if r.compulsory)


def optional_roles(roles: Iterable[Role]) -> tuple[Role, ...]:
    return tuple(r for r in roles if not r.compulsory)


@dataclass(frozen=True)
class Violation:
    code: str
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    role_name: str
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def codes(self) -> tuple[str, ...]:
        return tuple(v.code for v in self.violations)


def validate_role(role: Role) -> ValidationReport:
    """Structural checks on a role declaration.

    Codes: empty-name, name-contains-separator, duplicate-service,
    phi-not-total, phi-domain-outside-chi, phi-image-outside-s,
    bad-max-instances, empty-pattern.
    """
    violations: list[Violation] = []
    if not role.name:
        violations.append(Violation("empty-name", "role name is empty"))
    if INSTANCE_SEPARATOR in role.name:
        violations.append(
            Violation(
                "name-contains-separator",
                f"role name {role.name!r} contains {INSTANCE_SEPARATOR!r}",
            )
        )

    seen: set[tuple[ServiceTypeId, Direction]] = set()
    for spec in role.services:
        key = (spec.type_id, spec.direction)
        if key in seen:
            violations.append(
                Violation(
                    "duplicate-service",
                    f"service ({spec.type_id}, {spec.direction.value}) declared twice",
                )
            )
        seen.add(key)

    service_types = {s.type_id for s in role.services}
    for cond in sorted(role.conditions, key=lambda c: (c.kind.value, c.pattern)):
        if cond not in role.invocation_table:
            violations.append(
                Violation(
                    "phi-not-total",
                    f"condition ({cond.kind.value}, {cond.pattern!r}) has no invocation mapping",
                )
            )
    for cond in sorted(role.invocation_table, key=lambda c: (c.kind.value, c.pattern)):
        if cond not in role.conditions:
            violations.append(
                Violation(
                    "phi-domain-outside-chi",
                    f"invocation table maps undeclared condition ({cond.kind.value}, {cond.pattern!r})",
                )
            )
        target = role.invocation_table[cond]
        if target not in service_types:
            violations.append(
                Violation(
                    "phi-image-outside-s",
                    f"condition ({cond.kind.value}, {cond.pattern!r}) maps to {target!r},"
                    " which is not one of the role's services",
                )
            )

    if role.max_instances is not None and role.max_instances < 1:
        violations.append(
            Violation("bad-max-instances", f"max_instances must be >= 1, got {role.max_instances}")
        )

    patterns = list(role.conditions)
    if role.precondition is not None:
        patterns.append(role.precondition)
    for cond in patterns:
        if cond.pattern == "":
            violations.append(
                Violation("empty-pattern", f"condition of kind {cond.kind.value} has an empty pattern")
            )

    return ValidationReport(role_name=role.name, violations=tuple(violations))


def induce_things(env: Environment, candidates: Iterable[Thing]) -> frozenset[ThingId]:
    """Thing ids from candidates satisfying every constraint of env."""
    return frozenset(t.id for t in candidates if env.satisfied_by(t))


def classify(config: Configuration) -> Classification:
    """Label a configuration by its compulsory/optional role mix."""
    has_compulsory = any(r.compulsory for r in config.roles)
    has_optional = any(not r.compulsory for r in config.roles)
    if has_compulsory and has_optional:
        return Classification.HYBRID
    if has_compulsory:
        return Classification.CENTRALIZED
    if has_optional:
        return Classification.DECENTRALIZED
    return Classification.DEGENERATE


@dataclass(frozen=True)
class CompatibilityReport:
    """How well role `provider` serves role `consumer`: for every service the
    consumer expects, whether the provider offers it."""

    provider_role: str
    consumer_role: str
    coverage: Mapping[ServiceTypeId, bool]
    missing: frozenset[ServiceTypeId]
    fully_served: bool


def check_compatibility(provider: Role, consumer: Role) -> CompatibilityReport:
    provided = provider.provided_types
    coverage = {t: (t in provided) for t in sorted(consumer.expected_types)}
    missing = frozenset(t for t, ok in coverage.items() if not ok)
    return CompatibilityReport(
        provider_role=provider.name,
        consumer_role=consumer.name,
        coverage=coverage,
        missing=missing,
        fully_served=not missing,
    )
