"""Orchestrator: wires the context pipeline, lifecycle, and protocol into
the discrete-event simulator and emits the run trace.

Handshakes are message-based: requests and leaves route to the coordinator
thing (the mapped holder of the first compulsory role) and are decided on
delivery, so every decision sits behind realistic latency. Broadcasts fan
out to the configuration's current thing set.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .context import (
    Activity,
    ContextState,
    Event,
    Signal,
    aggregate_signals,
    conditions_from_context,
    infer_activity,
    update_context,
)
from .lifecycle import ConfigurationTemplate, Goal, accommodates, rematch
from .matching import Infeasible, MatchProblem, compute_delta, feasible
from .model import (
    ConditionKind,
    Configuration,
    ConfigState,
    Role,
    Thing,
    ThingId,
    Trigger,
    classify,
    instance_role_name,
)
from .protocol import (
    BROADCAST,
    DenyReason,
    MessageKind,
    Message,
    RoleDecision,
    offer_decision,
    request_role,
    validate_invocation,
    ProviderGone,
    ServiceNotExposed,
    ServiceNotProvided,
)
from .scenario import ScenarioDoc, ScriptSpec
from .sim import (
    Deliver,
    LinkModel,
    ScriptAction,
    SignalEmit,
    Simulator,
    ThingMove,
    TimerFire,
)
from .trace import Trace

logger = logging.getLogger(__name__)

DEFAULT_MAX_TIME_MS = 600_000


@dataclass(frozen=True)
class GoalSubmit:
    goal: Goal


@dataclass(frozen=True)
class UserCommand:
    user: str
    thing: ThingId
    command: str


@dataclass
class _AuctionRun:
    auction_id: str
    config_id: str
    role_name: str
    initiator: ThingId
    deadline_at: int
    bids: dict[ThingId, float] = field(default_factory=dict)
    candidates: frozenset[ThingId] = frozenset()
    closed: bool = False


@dataclass
class _PendingOffer:
    offer_id: int
    config_id: str
    role_name: str
    target: ThingId
    resolved: bool = False


@dataclass
class _PendingCall:
    call_id: int
    config_id: str
    caller: ThingId
    caller_instance: str
    provider: ThingId
    provider_instance: str
    service: str


@dataclass
class _ConfigRun:
    config: Configuration
    template: ConfigurationTemplate
    auction_queue: list[str] = field(default_factory=list)
    done: bool = False

    @property
    def active(self) -> bool:
        return not self.done and self.config.state is not ConfigState.DISSOLVED


class Orchestrator:
    """One simulation run over a scenario document."""

    def __init__(self, doc: ScenarioDoc, *, seed: int | None = None, trace: Trace | None = None):
        self.doc = doc
        self.seed = doc.sim.seed if seed is None else seed
        self.trace = trace if trace is not None else Trace()
        self.world: dict[ThingId, Thing] = doc.build_world()
        self.scripts: dict[ThingId, ScriptSpec] = {t.id: t.script for t in doc.things}
        link = LinkModel(
            default_latency_ms=doc.sim.default_latency_ms,
            overrides={(s, t): ms for s, t, ms in doc.sim.latency_overrides},
            drop_probability=doc.sim.drop_probability,
        )
        self.sim = Simulator(self.world, link, self.seed, self.trace)

        self.configs: list[_ConfigRun] = []
        self.contexts: dict[str, ContextState] = {}
        self._streams: dict[tuple[ThingId, str], list[Signal]] = {}
        self._emitted: dict[tuple[ThingId, str], int] = {}
        self._user_events: dict[str, list[Event]] = {}
        self._committed: dict[str, list[Activity]] = {}
        self._offers: dict[int, _PendingOffer] = {}
        self._calls: dict[int, _PendingCall] = {}
        self._auctions: dict[str, _AuctionRun] = {}
        self._config_seq = 0
        self._offer_seq = 0
        self._call_seq = 0
        self._started = False

    # -- run plumbing ------------------------------------------------------

    def begin(self) -> None:
        """Emit the run-start record and schedule the scenario's timed items."""
        if self._started:
            return
        self._started = True
        self.trace.emit(
            0,
            "RunStart",
            seed=self.seed,
            scenario=self.doc.name,
            schema_version=self.doc.schema_version,
        )
        for tg in self.doc.goals:
            self.sim.schedule(tg.at_ms, GoalSubmit(tg.goal))
        for ts in self.doc.signals:
            self.sim.schedule(
                ts.at_ms,
                SignalEmit(Signal(source=ts.thing, sensor=ts.sensor, timestamp=ts.at_ms, value=ts.value)),
            )
        for tm in self.doc.moves:
            self.sim.schedule(tm.at_ms, ThingMove(thing=tm.thing, to=tm.to))
        for tc in self.doc.commands:
            self.sim.schedule(tc.at_ms, UserCommand(user=tc.user, thing=tc.thing, command=tc.command))
        for spec in self.doc.things:
            for action in spec.script.actions:
                self.sim.schedule(int(action["at_ms"]), ScriptAction(thing=spec.id, action=action))

    def step_to(self, at_ms: int) -> None:
        self.sim.run(self._dispatch, at_ms)

    def run(self, max_time_ms: int = DEFAULT_MAX_TIME_MS) -> Trace:
        self.begin()
        self.step_to(max_time_ms)
        return self.trace

    def _dispatch(self, at_ms: int, item: object) -> None:
        if isinstance(item, Deliver):
            self._on_deliver(item.message, item.recipient)
        elif isinstance(item, SignalEmit):
            self._on_signal(item.signal)
        elif isinstance(item, ThingMove):
            self._on_move(item.thing, item.to)
        elif isinstance(item, ScriptAction):
            self._on_script_action(item.thing, dict(item.action))
        elif isinstance(item, TimerFire):
            self._on_timer(item.owner, item.timer_id)
        elif isinstance(item, GoalSubmit):
            self._on_goal(item.goal)
        elif isinstance(item, UserCommand):
            self._phi_activate(item.thing, Trigger(ConditionKind.USER_COMMAND, item.command))
        else:
            logger.warning("unhandled simulation item %r", item)

    # -- helpers -----------------------------------------------------------

    @property
    def clock(self) -> int:
        return self.sim.clock

    def _find_config(self, config_id: str) -> _ConfigRun | None:
        for rt in self.configs:
            if rt.config.config_id == config_id:
                return rt
        return None

    def _coordinator(self, config: Configuration) -> ThingId | None:
        """The mapped holder of the first compulsory role, if any."""
        for role in config.roles:
            if not role.compulsory:
                continue
            instances = config.instances_of(role.name)
            if instances:
                return instances[sorted(instances)[0]]
        return None

    def _triggers_for_thing(self, thing_id: ThingId) -> frozenset[Trigger]:
        owner = self.world[thing_id].owner if thing_id in self.world else None
        if owner is None or owner not in self.contexts:
            return frozenset()
        return conditions_from_context(self.contexts[owner])

    # -- formation ---------------------------------------------------------

    def _on_goal(self, goal: Goal) -> None:
        template = next((t for t in self.doc.templates if accommodates(t, goal)), None)
        if template is None:
            logger.warning("no template accommodates goal %r for %s", goal.tag, goal.user)
            return
        self._config_seq += 1
        config_id = f"{template.purpose.tag}#{self._config_seq}"
        induced = sorted(
            t.id for t in self.world.values() if template.environment.satisfied_by(t)
        )
        config = Configuration(
            config_id=config_id,
            roles=template.roles,
            things=set(induced),
            delta={},
            purpose=template.purpose,
            environment=template.environment,
            state=ConfigState.FORMING,
        )
        rt = _ConfigRun(config=config, template=template)
        self.configs.append(rt)
        label = classify(config).value

        if template.assign_by_auction:
            self.trace.emit(
                self.clock,
                "ConfigFormed",
                config=config_id,
                purpose=template.purpose.tag,
                classification=label,
                state=ConfigState.FORMING.value,
                goal_user=goal.user,
                goal_tag=goal.tag,
            )
            for tid in induced:
                self.trace.emit(self.clock, "ThingJoined", config=config_id, thing=tid, via="formation")
            rt.auction_queue = [r.name for r in template.roles if r.compulsory]
            self._next_auction(rt)
            return

        try:
            result = compute_delta(
                MatchProblem(
                    roles=tuple(r for r in template.roles if r.compulsory),
                    things=tuple(self.world[tid] for tid in induced),
                    allow_multi_role=template.allow_multi_role,
                )
            )
        except Infeasible:
            self.trace.emit(
                self.clock,
                "ConfigFormed",
                config=config_id,
                purpose=template.purpose.tag,
                classification=label,
                state=ConfigState.FORMING.value,
                goal_user=goal.user,
                goal_tag=goal.tag,
            )
            for tid in induced:
                self.trace.emit(self.clock, "ThingJoined", config=config_id, thing=tid, via="formation")
            self.trace.emit(
                self.clock,
                "ConfigStateChanged",
                config=config_id,
                **{"from": ConfigState.FORMING.value, "to": ConfigState.DISSOLVED.value},
                reason="infeasible",
            )
            config.state = ConfigState.DISSOLVED
            rt.done = True
            return

        config.state = ConfigState.OPERATIONAL
        self.trace.emit(
            self.clock,
            "ConfigFormed",
            config=config_id,
            purpose=template.purpose.tag,
            classification=label,
            state=ConfigState.OPERATIONAL.value,
            goal_user=goal.user,
            goal_tag=goal.tag,
        )
        for tid in induced:
            self.trace.emit(self.clock, "ThingJoined", config=config_id, thing=tid, via="formation")
        for instance, tid in sorted(result.delta.items()):
            config.delta[instance] = tid
            self.trace.emit(
                self.clock,
                "RoleGranted",
                config=config_id,
                role=instance_role_name(instance),
                instance=instance,
                thing=tid,
                via="formation",
            )

    # -- auctions ----------------------------------------------------------

    def _next_auction(self, rt: _ConfigRun) -> None:
        config = rt.config
        if not rt.auction_queue:
            config.state = ConfigState.OPERATIONAL
            self.trace.emit(
                self.clock,
                "ConfigStateChanged",
                config=config.config_id,
                **{"from": ConfigState.FORMING.value, "to": ConfigState.OPERATIONAL.value},
                reason="auction_complete",
            )
            return
        role_name = rt.auction_queue.pop(0)
        role = config.role_by_name(role_name)
        holders = set(config.delta.values())
        candidates = [
            tid
            for tid in sorted(config.things)
            if tid in self.world
            and feasible(role, self.world[tid])
            and (rt.template.allow_multi_role or tid not in holders)
        ]
        initiator = self._coordinator(config) or (
            candidates[0] if candidates else (sorted(config.things)[0] if config.things else None)
        )
        if initiator is None:
            self._dissolve(rt, reason="auction_failed")
            return
        auction_id = f"{config.config_id}:{role_name}"
        run = _AuctionRun(
            auction_id=auction_id,
            config_id=config.config_id,
            role_name=role_name,
            initiator=initiator,
            deadline_at=self.clock + self.doc.sim.auction_deadline_ms,
            candidates=frozenset(candidates),
        )
        self._auctions[auction_id] = run
        self.sim.send(
            initiator,
            BROADCAST,
            MessageKind.CFP,
            {"auction_id": auction_id, "subject": role_name, "config": config.config_id},
            broadcast_scope=candidates,
        )
        # the initiator never receives its own broadcast; submit its bid now
        own_bid = self.scripts.get(initiator, ScriptSpec()).bids.get(role_name)
        if initiator in run.candidates and own_bid is not None:
            run.bids[initiator] = float(own_bid)
        self.sim.schedule(run.deadline_at, TimerFire(owner="auction", timer_id=auction_id))

    def _close_auction(self, run: _AuctionRun) -> None:
        if run.closed:
            return
        run.closed = True
        rt = self._find_config(run.config_id)
        if rt is None or not rt.active:
            return
        config = rt.config
        if not run.bids:
            self._dissolve(rt, reason="auction_failed")
            return
        winner = min(run.bids, key=lambda tid: (-run.bids[tid], tid))
        self.sim.send(
            run.initiator,
            winner,
            MessageKind.AWARD,
            {"auction_id": run.auction_id, "subject": run.role_name, "bid": run.bids[winner]},
        )
        for loser in sorted(run.bids):
            if loser != winner:
                self.sim.send(
                    run.initiator,
                    loser,
                    MessageKind.REJECT,
                    {"auction_id": run.auction_id, "subject": run.role_name},
                )
        instance = config.next_instance(run.role_name)
        config.delta[instance] = winner
        config.things.add(winner)
        self.trace.emit(
            self.clock,
            "RoleGranted",
            config=config.config_id,
            role=run.role_name,
            instance=instance,
            thing=winner,
            via="auction",
        )
        self._next_auction(rt)

    # -- context pipeline ---------------------------------------------------

    def _on_signal(self, signal: Signal) -> None:
        key = (signal.source, signal.sensor)
        self._streams.setdefault(key, []).append(signal)
        events = aggregate_signals(self._streams[key], self.doc.event_rules)
        fresh = events[self._emitted.get(key, 0):]
        self._emitted[key] = len(events)
        for event in fresh:
            self._on_event(signal.source, event)

    def _on_event(self, source: ThingId, event: Event) -> None:
        owner = self.world[source].owner if source in self.world else None
        self.trace.emit(
            self.clock,
            "EventEmitted",
            tag=event.tag,
            source=source,
            window_start=event.window[0],
            window_end=event.window[1],
            user=owner or "",
        )
        self._phi_activate(source, Trigger(ConditionKind.EVENT_OBSERVED, event.tag))
        if owner is None:
            return
        self._user_events.setdefault(owner, []).append(event)
        committed = self._committed.setdefault(owner, [])
        fresh = infer_activity(self._user_events[owner], self.doc.activity_rules, pinned=committed)
        for activity in fresh:
            committed.append(activity)
            self.trace.emit(
                self.clock,
                "ActivityRecognized",
                tag=activity.tag,
                user=owner,
                span_start=activity.span[0],
                span_end=activity.span[1],
            )
            ctx = self.contexts.get(owner) or ContextState(user=owner)
            self.contexts[owner] = update_context(ctx, activity)
            self._react_to_activity(owner, activity)

    def _react_to_activity(self, owner: str, activity: Activity) -> None:
        trigger = Trigger(ConditionKind.ACTIVITY_RECOGNIZED, activity.tag)
        for tid in sorted(self.world):
            thing = self.world[tid]
            if thing.owner != owner:
                continue
            for action in self.scripts.get(tid, ScriptSpec()).on_activity.get(activity.tag, ()):
                self._on_script_action(tid, dict(action))
            self._phi_activate(tid, trigger)

    # -- movement and membership --------------------------------------------

    def _on_move(self, thing_id: ThingId, to: tuple[float, float]) -> None:
        thing = self.world.get(thing_id)
        if thing is None:
            logger.warning("move for unknown thing %s", thing_id)
            return
        thing.attributes["location"] = to
        # same-timestamp re-evaluation of every active configuration
        for rt in self.configs:
            if not rt.active:
                continue
            config = rt.config
            inside = config.environment.satisfied_by(thing)
            member = thing_id in config.things
            if member and not inside:
                held = config.instances_held_by(thing_id)
                keeps_membership = any(
                    config.role_by_name(instance_role_name(i)).remote_joinable for i in held
                )
                if not keeps_membership:
                    self._remove_thing(rt, thing_id, reason="left_environment")
            elif not member and inside:
                config.things.add(thing_id)
                self.trace.emit(
                    self.clock, "ThingJoined", config=config.config_id, thing=thing_id, via="entry"
                )
                if rt.template.offer_on_entry:
                    self._offer_first_open_role(rt, thing_id)

    def _offer_first_open_role(self, rt: _ConfigRun, target: ThingId) -> None:
        config = rt.config
        thing = self.world[target]
        if config.instances_held_by(target) and not rt.template.allow_multi_role:
            return
        for role in config.roles:
            if role.compulsory:
                continue
            if not feasible(role, thing):
                continue
            cap = role.instance_cap(max(len(self.world), len(config.things)))
            if len(config.instances_of(role.name)) >= cap:
                continue
            self._start_offer(rt, role, target)
            return

    def _start_offer(self, rt: _ConfigRun, role: Role, target: ThingId) -> None:
        self._offer_seq += 1
        offer = _PendingOffer(
            offer_id=self._offer_seq,
            config_id=rt.config.config_id,
            role_name=role.name,
            target=target,
        )
        self._offers[offer.offer_id] = offer
        sender = self._coordinator(rt.config)
        if sender is None:
            others = sorted(rt.config.things - {target})
            sender = others[0] if others else target
        self.sim.send(
            sender,
            target,
            MessageKind.ROLE_OFFER,
            {"offer_id": offer.offer_id, "role": role.name, "config": rt.config.config_id},
        )
        self.sim.schedule(
            self.clock + self.doc.sim.handshake_timeout_ms,
            TimerFire(owner="offer", timer_id=str(offer.offer_id)),
        )

    # -- scripted actions -----------------------------------------------------

    def _on_script_action(self, thing_id: ThingId, action: dict) -> None:
        kind = action.get("action")
        if kind == "request_role":
            self._action_request_role(thing_id, str(action["role"]))
        elif kind == "leave":
            self._action_leave(thing_id)
        elif kind == "invoke_service":
            self._action_invoke(thing_id, str(action["service"]), dict(action.get("args") or {}))
        else:
            logger.warning("unknown scripted action %r for %s", kind, thing_id)

    def _action_request_role(self, thing_id: ThingId, role_name: str) -> None:
        rt = next(
            (
                rt
                for rt in self.configs
                if rt.active and any(r.name == role_name for r in rt.config.roles)
            ),
            None,
        )
        if rt is None:
            logger.info("%s requested role %r but no active configuration has it", thing_id, role_name)
            return
        recipient = self._coordinator(rt.config) or thing_id
        self.sim.send(
            thing_id,
            recipient,
            MessageKind.ROLE_REQUEST,
            {"role": role_name, "config": rt.config.config_id},
        )

    def _action_leave(self, thing_id: ThingId) -> None:
        for rt in self.configs:
            if rt.active and thing_id in rt.config.things:
                recipient = self._coordinator(rt.config) or thing_id
                self.sim.send(
                    thing_id, recipient, MessageKind.LEAVE, {"config": rt.config.config_id}
                )

    def _action_invoke(self, thing_id: ThingId, service: str, args: dict) -> None:
        for rt in self.configs:
            if not rt.active:
                continue
            config = rt.config
            caller_instance = next(
                (
                    inst
                    for inst in sorted(config.instances_held_by(thing_id))
                    if service in config.role_by_name(instance_role_name(inst)).expected_types
                ),
                None,
            )
            if caller_instance is None:
                continue
            provider_instance = self._first_provider(config, service, exclude=caller_instance)
            if provider_instance is None:
                logger.info("no mapped provider for %r in %s", service, config.config_id)
                return
            self._send_call(rt, thing_id, caller_instance, provider_instance, service, args)
            return
        logger.info("%s cannot invoke %r: no role expecting it", thing_id, service)

    def _first_provider(
        self, config: Configuration, service: str, *, exclude: str | None = None
    ) -> str | None:
        for role in config.roles:
            if service not in role.provided_types:
                continue
            for inst in sorted(config.instances_of(role.name)):
                if inst != exclude:
                    return inst
        return None

    def _send_call(
        self,
        rt: _ConfigRun,
        caller: ThingId,
        caller_instance: str,
        provider_instance: str,
        service: str,
        args: dict,
    ) -> None:
        provider = rt.config.delta[provider_instance]
        self._call_seq += 1
        call = _PendingCall(
            call_id=self._call_seq,
            config_id=rt.config.config_id,
            caller=caller,
            caller_instance=caller_instance,
            provider=provider,
            provider_instance=provider_instance,
            service=service,
        )
        self._calls[call.call_id] = call
        self.sim.send(
            caller,
            provider,
            MessageKind.SERVICE_CALL,
            {
                "call_id": call.call_id,
                "config": rt.config.config_id,
                "service": service,
                "caller_instance": caller_instance,
                "provider_instance": provider_instance,
                "args": args,
            },
        )

    # -- message handling -------------------------------------------------

    def _on_deliver(self, msg: Message, recipient: ThingId) -> None:
        thing = self.world.get(recipient)
        if thing is None:
            logger.warning("delivery to unknown thing %s", recipient)
            return
        thing.mailbox.append(msg)
        self.trace.emit(
            self.clock,
            "MsgDelivered",
            msg_id=msg.msg_id,
            sender=msg.sender,
            to=recipient,
            msg_kind=msg.kind.value,
        )
        handler = {
            MessageKind.ROLE_REQUEST: self._handle_role_request,
            MessageKind.ROLE_OFFER: self._handle_role_offer,
            MessageKind.ROLE_DENY: self._handle_role_deny,
            MessageKind.CFP: self._handle_cfp,
            MessageKind.BID: self._handle_bid,
            MessageKind.LEAVE: self._handle_leave,
            MessageKind.SERVICE_CALL: self._handle_service_call,
            MessageKind.SERVICE_RESULT: self._handle_service_result,
        }.get(msg.kind)
        if handler is not None:
            handler(msg, recipient)
        self._phi_activate(recipient, Trigger(ConditionKind.MESSAGE_RECEIVED, msg.kind.value))

    def _handle_role_request(self, msg: Message, recipient: ThingId) -> None:
        config_id = str(msg.payload.get("config", ""))
        role_name = str(msg.payload.get("role", ""))
        rt = self._find_config(config_id)
        if rt is None or not rt.active:
            logger.info("role request for inactive configuration %s", config_id)
            return
        requester = self.world.get(msg.sender)
        if requester is None:
            return

        offer_id = msg.payload.get("offer_id")
        was_member = msg.sender in rt.config.things
        if offer_id is not None:
            offer = self._offers.get(int(offer_id))
            if offer is None or offer.resolved:
                return  # answer arrived after the timeout already resolved it
            offer.resolved = True
            decision = offer_decision(
                requester,
                rt.config,
                role_name,
                world=self.world,
                accepted=True,
                allow_multi_role=rt.template.allow_multi_role,
            )
            via = "offer"
        else:
            decision = request_role(
                requester,
                rt.config,
                role_name,
                world=self.world,
                triggers=self._triggers_for_thing(msg.sender),
                allow_multi_role=rt.template.allow_multi_role,
            )
            via = "request"
        self._finish_handshake(rt, decision, recipient, via=via, was_member=was_member)

    def _finish_handshake(
        self,
        rt: _ConfigRun,
        decision: RoleDecision,
        responder: ThingId,
        *,
        via: str,
        was_member: bool,
    ) -> None:
        config = rt.config
        if decision.granted:
            if not was_member:
                self.trace.emit(
                    self.clock, "ThingJoined", config=config.config_id, thing=decision.thing, via=via
                )
            self.trace.emit(
                self.clock,
                "RoleGranted",
                config=config.config_id,
                role=decision.role_name,
                instance=decision.instance,
                thing=decision.thing,
                via=via,
            )
            if responder != decision.thing:
                self.sim.send(
                    responder,
                    decision.thing,
                    MessageKind.ROLE_GRANT,
                    {"role": decision.role_name, "instance": decision.instance, "config": config.config_id},
                )
        else:
            reason = decision.reason.value if decision.reason else "Denied"
            self.trace.emit(
                self.clock,
                "RoleDenied",
                config=config.config_id,
                role=decision.role_name,
                thing=decision.thing,
                reason=reason,
            )
            if responder != decision.thing:
                self.sim.send(
                    responder,
                    decision.thing,
                    MessageKind.ROLE_DENY,
                    {"role": decision.role_name, "reason": reason, "config": config.config_id},
                )

    def _handle_role_offer(self, msg: Message, recipient: ThingId) -> None:
        role_name = str(msg.payload.get("role", ""))
        answer = self.scripts.get(recipient, ScriptSpec()).on_offer.get(role_name)
        if answer == "accept":
            self.sim.send(
                recipient,
                msg.sender,
                MessageKind.ROLE_REQUEST,
                {
                    "role": role_name,
                    "config": msg.payload.get("config"),
                    "offer_id": msg.payload.get("offer_id"),
                },
            )
        elif answer == "decline":
            self.sim.send(
                recipient,
                msg.sender,
                MessageKind.ROLE_DENY,
                {
                    "role": role_name,
                    "config": msg.payload.get("config"),
                    "offer_id": msg.payload.get("offer_id"),
                    "reason": DenyReason.DECLINED.value,
                },
            )
        # no scripted answer: the offer expires via its timer

    def _handle_role_deny(self, msg: Message, recipient: ThingId) -> None:
        offer_id = msg.payload.get("offer_id")
        if offer_id is None:
            return  # a denial notice to a requester needs no engine action
        offer = self._offers.get(int(offer_id))
        if offer is None or offer.resolved:
            return
        offer.resolved = True
        rt = self._find_config(offer.config_id)
        if rt is None or not rt.active:
            return
        self.trace.emit(
            self.clock,
            "RoleDenied",
            config=offer.config_id,
            role=offer.role_name,
            thing=offer.target,
            reason=DenyReason.DECLINED.value,
        )

    def _handle_cfp(self, msg: Message, recipient: ThingId) -> None:
        auction_id = str(msg.payload.get("auction_id", ""))
        subject = str(msg.payload.get("subject", ""))
        bid = self.scripts.get(recipient, ScriptSpec()).bids.get(subject)
        if bid is None:
            return
        self.sim.send(
            recipient,
            msg.sender,
            MessageKind.BID,
            {"auction_id": auction_id, "subject": subject, "value": float(bid)},
        )

    def _handle_bid(self, msg: Message, recipient: ThingId) -> None:
        auction_id = str(msg.payload.get("auction_id", ""))
        run = self._auctions.get(auction_id)
        if run is None or run.closed:
            return
        if self.clock > run.deadline_at:
            return  # late bids are ignored
        if run.candidates and msg.sender not in run.candidates:
            return
        value = msg.payload.get("value")
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            run.bids[msg.sender] = float(value)

    def _handle_leave(self, msg: Message, recipient: ThingId) -> None:
        config_id = str(msg.payload.get("config", ""))
        rt = self._find_config(config_id)
        if rt is None or not rt.active:
            return
        self._remove_thing(rt, msg.sender, reason="leave")

    def _handle_service_call(self, msg: Message, recipient: ThingId) -> None:
        config_id = str(msg.payload.get("config", ""))
        rt = self._find_config(config_id)
        if rt is None or not rt.active:
            return
        call_id = msg.payload.get("call_id")
        service = str(msg.payload.get("service", ""))
        caller_instance = str(msg.payload.get("caller_instance", ""))
        provider_instance = str(msg.payload.get("provider_instance", ""))
        try:
            validate_invocation(rt.config, caller_instance, provider_instance, service)
        except (ServiceNotExposed, ServiceNotProvided, ProviderGone, ValueError, KeyError) as exc:
            logger.warning("service call rejected: %s", exc)
            return
        result = {"status": "ok"}
        result.update(self.scripts.get(recipient, ScriptSpec()).on_service.get(service, {}))
        caller = msg.sender
        decision = dict(self.scripts.get(caller, ScriptSpec()).on_result.get(service, {}))
        self.trace.emit(
            self.clock,
            "ServiceInvoked",
            config=config_id,
            service=service,
            caller=caller,
            provider=recipient,
            caller_instance=caller_instance,
            provider_instance=provider_instance,
            result=result,
            decision=decision,
        )
        self.sim.send(
            recipient,
            caller,
            MessageKind.SERVICE_RESULT,
            {"call_id": call_id, "service": service, "result": result},
        )
        if result.get("broadcast") is True:
            self.sim.send(
                recipient,
                BROADCAST,
                MessageKind.SERVICE_RESULT,
                {"service": service, "content": {k: v for k, v in result.items() if k != "broadcast"}},
                broadcast_scope=rt.config.things,
            )

    def _handle_service_result(self, msg: Message, recipient: ThingId) -> None:
        call_id = msg.payload.get("call_id")
        if call_id is None:
            return
        call = self._calls.pop(int(call_id), None)
        if call is None or call.caller != recipient:
            return
        policy = self.scripts.get(recipient, ScriptSpec()).on_result.get(call.service, {})
        rt = self._find_config(call.config_id)
        if policy.get("broadcast") is True and rt is not None and rt.active:
            self.sim.send(
                recipient,
                BROADCAST,
                MessageKind.SERVICE_RESULT,
                {"service": call.service, "content": dict(msg.payload.get("result") or {})},
                broadcast_scope=rt.config.things,
            )

    # -- timers -------------------------------------------------------------

    def _on_timer(self, owner: str, timer_id: str) -> None:
        if owner == "auction":
            run = self._auctions.get(timer_id)
            if run is not None:
                self._close_auction(run)
        elif owner == "offer":
            offer = self._offers.get(int(timer_id))
            if offer is None or offer.resolved:
                return
            offer.resolved = True
            rt = self._find_config(offer.config_id)
            if rt is None or not rt.active:
                return
            self.trace.emit(
                self.clock,
                "RoleDenied",
                config=offer.config_id,
                role=offer.role_name,
                thing=offer.target,
                reason=DenyReason.TIMEOUT.value,
            )

    # -- departure and re-matching ------------------------------------------

    def _remove_thing(self, rt: _ConfigRun, thing_id: ThingId, *, reason: str) -> None:
        config = rt.config
        if thing_id not in config.things and not config.instances_held_by(thing_id):
            return
        for inst in config.instances_held_by(thing_id):
            del config.delta[inst]
        config.things.discard(thing_id)
        self.trace.emit(
            self.clock, "ThingLeft", config=config.config_id, thing=thing_id, reason=reason
        )
        if config.state is ConfigState.OPERATIONAL and config.unmapped_compulsory():
            config.state = ConfigState.FORMING
            self.trace.emit(
                self.clock,
                "ConfigStateChanged",
                config=config.config_id,
                **{"from": ConfigState.OPERATIONAL.value, "to": ConfigState.FORMING.value},
                reason="compulsory_lost",
            )
            outcome = rematch(config, self.world, allow_multi_role=rt.template.allow_multi_role)
            if outcome.dissolved:
                self.trace.emit(
                    self.clock,
                    "ConfigStateChanged",
                    config=config.config_id,
                    **{"from": ConfigState.FORMING.value, "to": ConfigState.DISSOLVED.value},
                    reason="rematch_failed",
                )
                rt.done = True
                return
            for inst, tid in outcome.granted:
                self.trace.emit(
                    self.clock,
                    "RoleGranted",
                    config=config.config_id,
                    role=instance_role_name(inst),
                    instance=inst,
                    thing=tid,
                    via="rematch",
                )
            self.trace.emit(
                self.clock,
                "ConfigStateChanged",
                config=config.config_id,
                **{"from": ConfigState.FORMING.value, "to": ConfigState.OPERATIONAL.value},
                reason="rematch",
            )

    def _dissolve(self, rt: _ConfigRun, *, reason: str) -> None:
        config = rt.config
        previous = config.state
        config.state = ConfigState.DISSOLVED
        self.trace.emit(
            self.clock,
            "ConfigStateChanged",
            config=config.config_id,
            **{"from": previous.value, "to": ConfigState.DISSOLVED.value},
            reason=reason,
        )
        rt.done = True

    # -- invocation table activation -----------------------------------------

    def _phi_activate(self, thing_id: ThingId, trigger: Trigger) -> None:
        """Run the invocation tables of every role instance the thing holds
        against one trigger. Provided services execute locally; expected
        services are invoked on their first mapped provider."""
        for rt in self.configs:
            if not rt.active:
                continue
            config = rt.config
            for inst in sorted(config.instances_held_by(thing_id)):
                role = config.role_by_name(instance_role_name(inst))
                for cond in sorted(role.conditions, key=lambda c: (c.kind.value, c.pattern)):
                    if not cond.matches(trigger):
                        continue
                    service = role.invocation_table.get(cond)
                    if service is None:
                        continue
                    if service in role.provided_types:
                        result = {"status": "ok"}
                        result.update(
                            self.scripts.get(thing_id, ScriptSpec()).on_service.get(service, {})
                        )
                        self.trace.emit(
                            self.clock,
                            "ServiceInvoked",
                            config=config.config_id,
                            service=service,
                            caller=thing_id,
                            provider=thing_id,
                            caller_instance=inst,
                            provider_instance=inst,
                            result=result,
                            decision={},
                        )
                        if result.get("broadcast") is True:
                            self.sim.send(
                                thing_id,
                                BROADCAST,
                                MessageKind.SERVICE_RESULT,
                                {
                                    "service": service,
                                    "content": {k: v for k, v in result.items() if k != "broadcast"},
                                },
                                broadcast_scope=config.things,
                            )
                    elif service in role.expected_types:
                        provider_instance = self._first_provider(config, service, exclude=inst)
                        if provider_instance is None:
                            logger.info(
                                "no mapped provider for %r triggered by %s", service, thing_id
                            )
                            continue
                        self._send_call(rt, thing_id, inst, provider_instance, service, {})


def run_scenario(doc: ScenarioDoc, *, seed: int | None = None, max_time_ms: int = DEFAULT_MAX_TIME_MS) -> Trace:
    """Convenience wrapper: build an orchestrator, run it, return the trace."""
    return Orchestrator(doc, seed=seed).run(max_time_ms)
