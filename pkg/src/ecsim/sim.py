"""Deterministic discrete-event simulator.

Events execute in (time, insertion order); all randomness flows through one
seeded generator consumed in event-execution order, so a (scenario, seed)
pair always yields the same trace bytes. Refactors must preserve draw order
to keep that contract.
"""
from __future__ import annotations

import heapq
import random
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

from .context import Signal
from .model import Point, Thing, ThingId
from .protocol import BROADCAST, Message, MessageKind
from .trace import Trace


class PastEvent(Exception):
    """Scheduling before the current clock is refused."""


class UnknownRecipient(Exception):
    """Unicast to a thing the simulator does not know."""


@dataclass(frozen=True)
class Deliver:
    message: Message
    recipient: ThingId


@dataclass(frozen=True)
class SignalEmit:
    signal: Signal


@dataclass(frozen=True)
class ThingMove:
    thing: ThingId
    to: Point


@dataclass(frozen=True)
class ScriptAction:
    thing: ThingId
    action: Mapping[str, object]


@dataclass(frozen=True)
class TimerFire:
    owner: str
    timer_id: str


@dataclass(frozen=True)
class LinkModel:
    """Delivery latency per ordered pair with a default, plus an i.i.d. drop
    probability applied per delivery attempt."""

    default_latency_ms: int = 10
    overrides: Mapping[tuple[ThingId, ThingId], int] = field(default_factory=dict)
    drop_probability: float = 0.0

    def latency(self, sender: ThingId, recipient: ThingId) -> int:
        if sender == recipient:
            return 0
        return self.overrides.get((sender, recipient), self.default_latency_ms)


class Simulator:
    """Owns the clock, the event queue, the things, and the message ids."""

    def __init__(
        self,
        things: dict[ThingId, Thing],
        link: LinkModel,
        seed: int,
        trace: Trace,
    ):
        self.things = things
        self.link = link
        self.trace = trace
        self.rng = random.Random(seed)
        self.clock = 0
        self._seq = 0
        self._queue: list[tuple[int, int, object]] = []
        self._msg_counters: dict[ThingId, int] = defaultdict(int)

    def schedule(self, at_ms: int, item: object) -> None:
        if at_ms < self.clock:
            raise PastEvent(f"cannot schedule at t={at_ms}, clock is {self.clock}")
        heapq.heappush(self._queue, (at_ms, self._seq, item))
        self._seq += 1

    def next_msg_id(self, sender: ThingId) -> int:
        self._msg_counters[sender] += 1
        return self._msg_counters[sender]

    def send(
        self,
        sender: ThingId,
        to: str,
        kind: MessageKind,
        payload: Mapping[str, object] | None = None,
        *,
        broadcast_scope: Iterable[ThingId] = (),
    ) -> Message:
        """Emit one message. Unicast goes to `to`; Broadcast fans out to the
        scope (minus the sender), one delivery per recipient with per-pair
        latency. Each delivery attempt draws once from the seeded generator
        to decide a drop."""
        msg = Message(
            msg_id=self.next_msg_id(sender),
            sender=sender,
            to=to,
            kind=kind,
            payload=payload or {},
            sent_at=self.clock,
        )
        self.trace.emit(
            self.clock,
            "MsgSent",
            msg_id=msg.msg_id,
            sender=sender,
            to=to,
            msg_kind=kind.value,
        )
        if to == BROADCAST:
            recipients = sorted(set(broadcast_scope) - {sender})
        else:
            if to not in self.things:
                raise UnknownRecipient(f"no thing with id {to!r}")
            recipients = [to]
        for recipient in recipients:
            dropped = self.rng.random() < self.link.drop_probability
            if dropped:
                self.trace.emit(
                    self.clock,
                    "MsgDropped",
                    msg_id=msg.msg_id,
                    sender=sender,
                    to=recipient,
                    msg_kind=kind.value,
                )
                continue
            self.schedule(
                self.clock + self.link.latency(sender, recipient),
                Deliver(message=msg, recipient=recipient),
            )
        return msg

    def run(self, dispatch: Callable[[int, object], None], max_time_ms: int) -> None:
        """Drain the queue in (time, insertion) order up to and including
        max_time_ms."""
        while self._queue and self._queue[0][0] <= max_time_ms:
            at_ms, _, item = heapq.heappop(self._queue)
            self.clock = at_ms
            dispatch(at_ms, item)

    @property
    def pending(self) -> int:
        return len(self._queue)
