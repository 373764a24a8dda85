"""Coordination protocol: message schema, call-for-bids auctions, the role
handshake decision rules, and service invocation checks.

The functions here are synchronous decision logic; the engine owns message
transport, timers, and tracing.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

from .matching import feasible
from .model import (
    Configuration,
    ConfigState,
    Role,
    Thing,
    ThingId,
    Trigger,
    induce_things,
    instance_role_name,
)

BROADCAST = "*"


class MessageKind(str, Enum):
    CFP = "Cfp"
    BID = "Bid"
    AWARD = "Award"
    REJECT = "Reject"
    ROLE_OFFER = "RoleOffer"
    ROLE_REQUEST = "RoleRequest"
    ROLE_GRANT = "RoleGrant"
    ROLE_DENY = "RoleDeny"
    LEAVE = "Leave"
    SERVICE_CALL = "ServiceCall"
    SERVICE_RESULT = "ServiceResult"


@dataclass(frozen=True)
class Message:
    """One protocol message. msg_id is strictly increasing per sender; the
    simulator allocates ids at send time."""

    msg_id: int
    sender: ThingId
    to: str  # a ThingId or BROADCAST
    kind: MessageKind
    payload: Mapping[str, object] = field(default_factory=dict)
    sent_at: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "payload", dict(self.payload))


class AuctionState(str, Enum):
    OPEN = "Open"
    AWARDED = "Awarded"
    FAILED = "Failed"


@dataclass(frozen=True)
class AuctionOutcome:
    auction_id: str
    subject: str
    state: AuctionState
    winner: ThingId | None = None
    winning_bid: float | None = None


@dataclass
class Auction:
    """Call-for-bids state: collect until the deadline, then award to the
    highest bid (ties to the smaller ThingId) or fail if nobody bid."""

    auction_id: str
    initiator: ThingId
    subject: str
    deadline_ms: int
    candidates: frozenset[ThingId] = frozenset()
    bids: dict[ThingId, float] = field(default_factory=dict)
    state: AuctionState = AuctionState.OPEN

    def submit_bid(self, thing: ThingId, value: float, at_ms: int) -> bool:
        """Record a bid; returns whether it was accepted. Late bids, bids
        from non-candidates, and bids on a closed auction are ignored."""
        if self.state is not AuctionState.OPEN:
            return False
        if at_ms > self.deadline_ms:
            return False
        if self.candidates and thing not in self.candidates:
            return False
        self.bids[thing] = value
        return True

    def close(self) -> AuctionOutcome:
        if self.state is not AuctionState.OPEN:
            raise RuntimeError(f"auction {self.auction_id} already closed")
        won = decide_winner(self.bids)
        if won is None:
            self.state = AuctionState.FAILED
            return AuctionOutcome(self.auction_id, self.subject, AuctionState.FAILED)
        winner, value = won
        self.state = AuctionState.AWARDED
        return AuctionOutcome(
            self.auction_id, self.subject, AuctionState.AWARDED, winner, value
        )


def decide_winner(bids: Mapping[ThingId, float]) -> tuple[ThingId, float] | None:
    """Highest bid wins; ties go to the smaller ThingId; no bids, no winner."""
    if not bids:
        return None
    winner = min(bids, key=lambda tid: (-bids[tid], tid))
    return winner, bids[winner]


def run_auction(
    initiator: ThingId,
    subject: str,
    candidates: Iterable[ThingId],
    deadline_ms: int,
    submissions: Iterable[tuple[ThingId, float, int]],
) -> AuctionOutcome:
    """Run one auction to completion from a submission log of
    (thing, value, at_ms) entries."""
    auction = Auction(
        auction_id=f"{subject}@{initiator}",
        initiator=initiator,
        subject=subject,
        deadline_ms=deadline_ms,
        candidates=frozenset(candidates),
    )
    for thing, value, at_ms in submissions:
        auction.submit_bid(thing, value, at_ms)
    return auction.close()


class DenyReason(str, Enum):
    NOT_IN_ENVIRONMENT = "NotInEnvironment"
    NOT_CAPABLE = "NotCapable"
    NO_SLOT = "NoSlot"
    PRECONDITION_UNMET = "PreconditionUnmet"
    # offer-path outcomes; request_role itself never returns these two
    DECLINED = "Declined"
    TIMEOUT = "Timeout"


@dataclass(frozen=True)
class RoleDecision:
    granted: bool
    role_name: str
    thing: ThingId
    instance: str | None = None
    reason: DenyReason | None = None


def request_role(
    thing: Thing,
    config: Configuration,
    role_name: str,
    *,
    world: Mapping[ThingId, Thing],
    triggers: Iterable[Trigger] = (),
    allow_multi_role: bool = False,
    skip_precondition: bool = False,
) -> RoleDecision:
    """Decide a thing's request to adopt a role, extending the mapping on
    grant.

    Checks, in order: environment membership, capability feasibility, slot
    availability under the instance cap and multi-role policy, then the
    role's context precondition against the supplied triggers. Roles that
    are remote-joinable (a provided service without the proximity
    requirement) waive the environment and precondition checks.
    """
    if config.state is ConfigState.DISSOLVED:
        raise ValueError(f"configuration {config.config_id} is dissolved")
    role = config.role_by_name(role_name)
    remote_ok = role.remote_joinable

    def deny(reason: DenyReason) -> RoleDecision:
        return RoleDecision(False, role_name, thing.id, reason=reason)

    if not remote_ok:
        induced = induce_things(config.environment, world.values())
        if thing.id not in induced:
            return deny(DenyReason.NOT_IN_ENVIRONMENT)

    if not feasible(role, thing):
        return deny(DenyReason.NOT_CAPABLE)

    held = config.instances_held_by(thing.id)
    if any(instance_role_name(inst) == role_name for inst in held):
        return deny(DenyReason.NO_SLOT)
    if not allow_multi_role and held:
        return deny(DenyReason.NO_SLOT)
    cap = role.instance_cap(max(len(world), len(config.things)))
    if len(config.instances_of(role_name)) >= cap:
        return deny(DenyReason.NO_SLOT)

    if (
        not skip_precondition
        and not remote_ok
        and role.precondition is not None
        and not any(role.precondition.matches(t) for t in triggers)
    ):
        return deny(DenyReason.PRECONDITION_UNMET)

    instance = config.next_instance(role_name)
    config.delta[instance] = thing.id
    config.things.add(thing.id)
    return RoleDecision(True, role_name, thing.id, instance=instance)


def offer_decision(
    target: Thing,
    config: Configuration,
    role_name: str,
    *,
    world: Mapping[ThingId, Thing],
    accepted: bool,
    allow_multi_role: bool = False,
) -> RoleDecision:
    """Resolve a configuration-initiated role offer once the target's answer
    is known. Declines never touch the mapping; acceptance runs the grant
    path minus the context precondition (the offer itself stands in for it).
    """
    if not accepted:
        return RoleDecision(False, role_name, target.id, reason=DenyReason.DECLINED)
    return request_role(
        target,
        config,
        role_name,
        world=world,
        allow_multi_role=allow_multi_role,
        skip_precondition=True,
    )


class ServiceNotExposed(Exception):
    """The calling role does not expect this service."""


class ServiceNotProvided(Exception):
    """The provider role does not provide this service."""


class ProviderGone(Exception):
    """The provider instance is no longer mapped to a thing."""


def validate_invocation(
    config: Configuration,
    caller_instance: str,
    provider_instance: str,
    service: str,
) -> tuple[Role, Role]:
    """Check a service call is well-formed: the caller's role expects the
    service, the provider's role provides it, and the provider instance is
    still mapped. Returns (caller role, provider role)."""
    caller_role = config.role_by_name(instance_role_name(caller_instance))
    provider_role = config.role_by_name(instance_role_name(provider_instance))
    if caller_instance not in config.delta:
        raise ValueError(f"caller instance {caller_instance} is not mapped")
    if service not in caller_role.expected_types:
        raise ServiceNotExposed(
            f"{caller_role.name} does not expect service {service!r}"
        )
    if service not in provider_role.provided_types:
        raise ServiceNotProvided(
            f"{provider_role.name} does not provide service {service!r}"
        )
    if provider_instance not in config.delta:
        raise ProviderGone(f"provider instance {provider_instance} is not mapped")
    return caller_role, provider_role
