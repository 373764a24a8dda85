"""Configuration lifecycle: goal-driven formation from templates, joining
and leaving, re-matching after a compulsory loss, and additive role
mutation."""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

from .matching import Infeasible, MatchProblem, compute_delta, feasible
from .model import (
    Configuration,
    ConfigState,
    Environment,
    PurposeTag,
    Role,
    ServiceSpec,
    ServiceTypeId,
    Thing,
    ThingId,
    Trigger,
    ValidationReport,
    induce_things,
    instance_role_name,
    validate_role,
)
from .protocol import DenyReason, RoleDecision, request_role

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Goal:
    """A user's ask: a purpose tag plus the capabilities needed to serve it."""

    user: str
    tag: str
    required_capabilities: frozenset[ServiceTypeId]

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "required_capabilities", frozenset(self.required_capabilities)
        )
        if not self.required_capabilities:
            raise ValueError("a goal must name at least one required capability")


@dataclass(frozen=True)
class ConfigurationTemplate:
    """A reusable recipe: purpose, roles, environment, and assignment policy.

    decentralized marks templates that intentionally carry no compulsory
    role; otherwise at least one role must be compulsory.
    """

    purpose: PurposeTag
    roles: tuple[Role, ...]
    environment: Environment
    assign_by_auction: bool = False
    offer_on_entry: bool = False
    allow_multi_role: bool = False
    decentralized: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "roles", tuple(self.roles))
        if not self.decentralized and not any(r.compulsory for r in self.roles):
            raise ValueError(
                f"template {self.purpose.tag!r} has no compulsory role;"
                " mark it decentralized if that is intended"
            )


class NoTemplate(Exception):
    """No template accommodates the goal."""


class InvalidRole(Exception):
    def __init__(self, report: ValidationReport):
        super().__init__(
            f"role {report.role_name!r} is invalid: "
            + "; ".join(v.detail for v in report.violations)
        )
        self.report = report


class NotInEnvironment(Exception):
    """The thing does not satisfy the configuration environment."""


def accommodates(template: ConfigurationTemplate, goal: Goal) -> bool:
    """A template serves a goal if the purpose tags match or the goal's
    required capabilities are covered by the union of services the
    template's roles provide."""
    if template.purpose.tag == goal.tag:
        return True
    union: set[ServiceTypeId] = set()
    for role in template.roles:
        union |= role.provided_types
    return goal.required_capabilities <= union


def form_configuration(
    goal: Goal,
    templates: Sequence[ConfigurationTemplate],
    world: Mapping[ThingId, Thing],
    *,
    config_id: str | None = None,
) -> Configuration:
    """Form a configuration for a goal: first accommodating template in
    declaration order, things induced by its environment, compulsory roles
    matched immediately. Optional roles start unmapped; they fill through
    the request/offer handshakes as context and membership evolve.

    Raises NoTemplate when nothing accommodates the goal and Infeasible when
    the environment holds no capable cover for the compulsory roles.
    """
    template = next((t for t in templates if accommodates(t, goal)), None)
    if template is None:
        raise NoTemplate(f"no template accommodates goal {goal.tag!r} for {goal.user}")

    induced = induce_things(template.environment, world.values())
    things = tuple(world[tid] for tid in sorted(induced))
    problem = MatchProblem(
        roles=tuple(r for r in template.roles if r.compulsory),
        things=things,
        allow_multi_role=template.allow_multi_role,
    )
    result = compute_delta(problem)

    return Configuration(
        config_id=config_id or f"{template.purpose.tag}#1",
        roles=template.roles,
        things=set(induced),
        delta=dict(result.delta),
        purpose=template.purpose,
        environment=template.environment,
        state=ConfigState.OPERATIONAL,
    )


def join(
    config: Configuration,
    thing: Thing,
    *,
    world: Mapping[ThingId, Thing],
    triggers: Iterable[Trigger] = (),
    allow_multi_role: bool = False,
) -> RoleDecision | None:
    """Bring a thing into the configuration and try to adopt a role for it.

    The thing must satisfy the environment (NotInEnvironment otherwise); it
    becomes part of the thing set either way, then the first role in
    declaration order that grants under the handshake rules is adopted.
    Returns the grant decision, or None when no role had an open, feasible,
    precondition-satisfied slot (the thing stays a roleless member).
    """
    if not config.environment.satisfied_by(thing):
        raise NotInEnvironment(
            f"{thing.id} does not satisfy the environment of {config.config_id}"
        )
    config.things.add(thing.id)
    for role in config.roles:
        decision = request_role(
            thing,
            config,
            role.name,
            world=world,
            triggers=triggers,
            allow_multi_role=allow_multi_role,
        )
        if decision.granted:
            return decision
    return None


@dataclass(frozen=True)
class RematchOutcome:
    """What a re-match attempt did: instances granted, instances revoked from
    promoted things (multi-role policy off), and the resulting state."""

    granted: tuple[tuple[str, ThingId], ...] = ()
    revoked: tuple[tuple[str, ThingId], ...] = ()
    dissolved: bool = False


def rematch(
    config: Configuration,
    world: Mapping[ThingId, Thing],
    *,
    allow_multi_role: bool = False,
) -> RematchOutcome:
    """One attempt to fill every unmapped compulsory instance from the
    configuration's current things. Holders of optional roles count as
    candidates (promotion); under the single-role policy a promoted thing
    gives up its other instances. Failure dissolves the configuration."""
    missing = config.unmapped_compulsory()
    if not missing:
        return RematchOutcome()

    # promotion: things holding only optional instances stay candidates
    compulsory_holders = {
        tid
        for inst, tid in config.delta.items()
        if config.role_by_name(instance_role_name(inst)).compulsory
    }
    available = tuple(
        world[tid]
        for tid in sorted(config.things)
        if tid in world and (allow_multi_role or tid not in compulsory_holders)
    )

    problem = MatchProblem(
        roles=tuple(r for r in config.roles if r.name in missing),
        things=available,
        allow_multi_role=allow_multi_role,
    )
    try:
        result = compute_delta(problem)
    except Infeasible:
        config.state = ConfigState.DISSOLVED
        return RematchOutcome(dissolved=True)

    granted: list[tuple[str, ThingId]] = []
    revoked: list[tuple[str, ThingId]] = []
    for inst, tid in sorted(result.delta.items()):
        if not allow_multi_role:
            for other in config.instances_held_by(tid):
                revoked.append((other, tid))
                del config.delta[other]
        config.delta[inst] = tid
        granted.append((inst, tid))
    config.state = ConfigState.OPERATIONAL
    return RematchOutcome(granted=tuple(granted), revoked=tuple(revoked))


def leave(
    config: Configuration,
    thing_id: ThingId,
    *,
    world: Mapping[ThingId, Thing],
    allow_multi_role: bool = False,
) -> RematchOutcome:
    """Remove a thing from the configuration: all of its role instances and
    its thing-set membership go. Losing a compulsory instance sends the
    configuration through Forming and a single re-match attempt; if that
    fails the configuration dissolves."""
    lost = config.instances_held_by(thing_id)
    for inst in lost:
        del config.delta[inst]
    config.things.discard(thing_id)

    if config.state is ConfigState.OPERATIONAL and config.unmapped_compulsory():
        config.state = ConfigState.FORMING
        return rematch(config, world, allow_multi_role=allow_multi_role)
    return RematchOutcome()


def mutate_role(
    config: Configuration,
    role_name: str,
    added_services: Iterable[ServiceSpec],
    *,
    world: Mapping[ThingId, Thing],
    allow_multi_role: bool = False,
) -> Configuration:
    """Extend a role's service set in place (mutation is additive only).

    The grown role must still validate (InvalidRole otherwise). Mapped
    things that no longer cover the role's provided services are unmapped
    and the lost instances re-matched: compulsory ones through the one-shot
    re-match (dissolving on failure), optional ones by greedy refill from
    feasible, unoccupied things. An empty addition is the identity.
    """
    if config.state is ConfigState.DISSOLVED:
        raise ValueError(f"configuration {config.config_id} is dissolved")
    role = config.role_by_name(role_name)
    additions = [s for s in added_services if s not in role.services]
    if not additions:
        return config

    new_role = replace(role, services=role.services + tuple(additions))
    report = validate_role(new_role)
    if not report.ok:
        raise InvalidRole(report)

    config.roles = tuple(new_role if r.name == role_name else r for r in config.roles)

    dropped: list[str] = []
    for inst, tid in sorted(config.instances_of(role_name).items()):
        thing = world.get(tid)
        if thing is None or not feasible(new_role, thing):
            del config.delta[inst]
            dropped.append(inst)

    if not dropped:
        return config

    if new_role.compulsory and config.unmapped_compulsory():
        if config.state is ConfigState.OPERATIONAL:
            config.state = ConfigState.FORMING
        rematch(config, world, allow_multi_role=allow_multi_role)
        return config

    # optional refill: system-driven, so feasibility and membership checks
    # only; the context precondition gates user-side joins, not re-matching
    holders = set(config.delta.values())
    for inst in dropped:
        pick = next(
            (
                tid
                for tid in sorted(config.things)
                if tid in world
                and feasible(new_role, world[tid])
                and (allow_multi_role or tid not in holders)
                and tid not in config.instances_of(role_name).values()
            ),
            None,
        )
        if pick is not None:
            config.delta[inst] = pick
            holders.add(pick)
        else:
            logger.info(
                "mutation of %s left instance %s unfilled in %s",
                role_name,
                inst,
                config.config_id,
            )
    return config


def snapshot(config: Configuration) -> Configuration:
    """Deep copy for before/after comparisons around mutations."""
    return copy.deepcopy(config)
