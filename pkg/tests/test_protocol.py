import pytest
from hypothesis import given, strategies as st

from conftest import make_role, make_thing, spec
from ecsim.model import (
    Condition,
    ConditionKind,
    Configuration,
    ConfigState,
    Environment,
    PurposeTag,
    Role,
    Trigger,
    WithinRadius,
)
from ecsim.protocol import (
    Auction,
    AuctionState,
    DenyReason,
    MessageKind,
    ProviderGone,
    ServiceNotExposed,
    ServiceNotProvided,
    decide_winner,
    offer_decision,
    request_role,
    run_auction,
    validate_invocation,
)

IN_MEETING = Trigger(ConditionKind.ACTIVITY_RECOGNIZED, "in_meeting")


def room_config(roles, things=(), delta=None, state=ConfigState.OPERATIONAL):
    return Configuration(
        config_id="room#1",
        roles=tuple(roles),
        things=set(things),
        delta=dict(delta or {}),
        purpose=PurposeTag(tag="room"),
        environment=Environment((WithinRadius(center=(0.0, 0.0), radius=10.0),)),
        state=state,
    )


class TestAuction:
    def make(self, deadline=1000, candidates=()):
        return Auction(
            auction_id="a1",
            initiator="init",
            subject="relay",
            deadline_ms=deadline,
            candidates=frozenset(candidates),
        )

    def test_highest_bid_wins(self):
        auction = self.make()
        auction.submit_bid("B", 0.2, 100)
        auction.submit_bid("C", 0.9, 200)
        auction.submit_bid("D", 0.5, 300)
        outcome = auction.close()
        assert outcome.state is AuctionState.AWARDED
        assert (outcome.winner, outcome.winning_bid) == ("C", 0.9)

    def test_tie_goes_to_smaller_id(self):
        auction = self.make()
        auction.submit_bid("zeta", 0.7, 0)
        auction.submit_bid("alpha", 0.7, 0)
        assert auction.close().winner == "alpha"

    def test_no_bids_fails(self):
        outcome = self.make().close()
        assert outcome.state is AuctionState.FAILED
        assert outcome.winner is None

    def test_bid_at_deadline_counts_but_later_does_not(self):
        auction = self.make(deadline=1000)
        assert auction.submit_bid("B", 1.0, 1000)
        assert not auction.submit_bid("C", 2.0, 1001)
        assert auction.close().winner == "B"

    def test_non_candidate_ignored(self):
        auction = self.make(candidates=("B", "C"))
        assert not auction.submit_bid("intruder", 9.0, 0)
        assert auction.submit_bid("B", 0.1, 0)
        assert auction.close().winner == "B"

    def test_rebid_replaces(self):
        auction = self.make()
        auction.submit_bid("B", 0.1, 0)
        auction.submit_bid("C", 0.5, 0)
        auction.submit_bid("B", 0.9, 10)
        assert auction.close().winner == "B"
        assert auction.bids["B"] == 0.9

    def test_closed_auction_rejects_bids_and_reclose(self):
        auction = self.make()
        auction.submit_bid("B", 1.0, 0)
        auction.close()
        assert not auction.submit_bid("C", 9.0, 0)
        with pytest.raises(RuntimeError, match="already closed"):
            auction.close()

    def test_run_auction_condenses_submission_log(self):
        outcome = run_auction(
            initiator="init",
            subject="relay",
            candidates=("B", "C"),
            deadline_ms=100,
            submissions=[("B", 0.4, 0), ("C", 0.6, 50), ("C", 0.2, 101)],
        )
        # C's late rebid is ignored, so its first bid stands
        assert (outcome.winner, outcome.winning_bid) == ("C", 0.6)
        assert outcome.subject == "relay"

    @given(
        bids=st.dictionaries(
            st.text(alphabet="abcdef", min_size=1, max_size=3),
            st.integers(min_value=1, max_value=1000).map(float),
            min_size=1,
            max_size=8,
        ),
        # exact in binary64 against integer bids, so scaling preserves order
        scale=st.sampled_from([0.5, 2.0, 4.0, 10.0]),
    )
    def test_winner_has_max_bid_and_scaling_keeps_winner(self, bids, scale):
        winner, value = decide_winner(bids)
        assert value == max(bids.values())
        assert all(tid >= winner for tid, v in bids.items() if v == value)
        scaled_winner, _ = decide_winner({t: v * scale for t, v in bids.items()})
        assert scaled_winner == winner


class TestRequestRole:
    def grant(self, **kw):
        role = make_role("cam", True, provided=("video",))
        thing = make_thing("t1", ("video",), (1, 0))
        config = room_config([role])
        world = {"t1": thing}
        return request_role(thing, config, "cam", world=world, **kw), config

    def test_grant_extends_mapping_and_membership(self):
        decision, config = self.grant()
        assert decision.granted
        assert decision.instance == "cam#1"
        assert config.delta == {"cam#1": "t1"}
        assert config.things == {"t1"}

    def test_not_in_environment(self, reviewer_role, room_things, meeting_purpose):
        config = room_config([reviewer_role])
        decision = request_role(
            room_things["laptop-D"], config, "reviewer",
            world=room_things, triggers=[IN_MEETING],
        )
        assert not decision.granted
        assert decision.reason is DenyReason.NOT_IN_ENVIRONMENT
        assert config.delta == {}

    def test_not_capable(self, presenter_role, room_things):
        config = room_config([presenter_role])
        decision = request_role(
            room_things["phone-B"], config, "presenter", world=room_things
        )
        assert decision.reason is DenyReason.NOT_CAPABLE

    def test_same_role_twice_is_no_slot(self, reviewer_role, room_things):
        config = room_config(
            [reviewer_role], things={"phone-B"}, delta={"reviewer#1": "phone-B"}
        )
        decision = request_role(
            room_things["phone-B"], config, "reviewer",
            world=room_things, triggers=[IN_MEETING],
        )
        assert decision.reason is DenyReason.NO_SLOT

    def test_single_role_policy_blocks_second_role(self, room_things):
        scribe = make_role("scribe", False, provided=("share_content",))
        courier = make_role("courier", False, provided=("share_content",))
        config = room_config(
            [scribe, courier], things={"phone-B"}, delta={"scribe#1": "phone-B"}
        )
        decision = request_role(
            room_things["phone-B"], config, "courier", world=room_things
        )
        assert decision.reason is DenyReason.NO_SLOT
        granted = request_role(
            room_things["phone-B"], config, "courier",
            world=room_things, allow_multi_role=True,
        )
        assert granted.granted
        assert granted.instance == "courier#1"

    def test_instance_cap_blocks(self, presenter_role, room_things):
        config = room_config(
            [presenter_role], things={"tablet-A"}, delta={"presenter#1": "tablet-A"}
        )
        other = make_thing("tablet-Z", list(room_things["tablet-A"].capabilities), (0, 2))
        world = dict(room_things, **{"tablet-Z": other})
        decision = request_role(other, config, "presenter", world=world)
        assert decision.reason is DenyReason.NO_SLOT

    def test_precondition_unmet_then_met(self, reviewer_role, room_things):
        config = room_config([reviewer_role])
        denied = request_role(
            room_things["phone-B"], config, "reviewer", world=room_things
        )
        assert denied.reason is DenyReason.PRECONDITION_UNMET
        granted = request_role(
            room_things["phone-B"], config, "reviewer",
            world=room_things, triggers=[IN_MEETING],
        )
        assert granted.granted

    def test_skip_precondition(self, reviewer_role, room_things):
        config = room_config([reviewer_role])
        decision = request_role(
            room_things["phone-B"], config, "reviewer",
            world=room_things, skip_precondition=True,
        )
        assert decision.granted

    def test_remote_joinable_waives_environment_and_precondition(self, room_things):
        relay = Role(
            name="relay",
            compulsory=False,
            services=(spec("share_content", "provided", requires_proximity=False),),
            precondition=Condition(ConditionKind.ACTIVITY_RECOGNIZED, "in_meeting"),
        )
        config = room_config([relay])
        decision = request_role(
            room_things["laptop-D"], config, "relay", world=room_things
        )
        assert decision.granted

    def test_dissolved_config_rejects_requests(self, reviewer_role, room_things):
        config = room_config([reviewer_role], state=ConfigState.DISSOLVED)
        with pytest.raises(ValueError, match="dissolved"):
            request_role(
                room_things["phone-B"], config, "reviewer", world=room_things
            )

    def test_grant_check_order_env_before_capability(self, presenter_role, room_things):
        # laptop-D is both outside and incapable; environment wins
        config = room_config([presenter_role])
        decision = request_role(
            room_things["laptop-D"], config, "presenter", world=room_things
        )
        assert decision.reason is DenyReason.NOT_IN_ENVIRONMENT


class TestOfferDecision:
    def test_decline_leaves_config_untouched(self, reviewer_role, room_things):
        config = room_config([reviewer_role])
        decision = offer_decision(
            room_things["phone-B"], config, "reviewer",
            world=room_things, accepted=False,
        )
        assert decision.reason is DenyReason.DECLINED
        assert config.delta == {}
        assert config.things == set()

    def test_accept_skips_precondition(self, reviewer_role, room_things):
        config = room_config([reviewer_role])
        decision = offer_decision(
            room_things["phone-B"], config, "reviewer",
            world=room_things, accepted=True,
        )
        assert decision.granted
        assert config.delta == {"reviewer#1": "phone-B"}

    def test_accept_still_checks_environment(self, reviewer_role, room_things):
        config = room_config([reviewer_role])
        decision = offer_decision(
            room_things["laptop-D"], config, "reviewer",
            world=room_things, accepted=True,
        )
        assert decision.reason is DenyReason.NOT_IN_ENVIRONMENT


class TestValidateInvocation:
    def config(self, presenter_role, reviewer_role):
        return room_config(
            [presenter_role, reviewer_role],
            things={"tablet-A", "phone-B"},
            delta={"presenter#1": "tablet-A", "reviewer#1": "phone-B"},
        )

    def test_valid_call(self, presenter_role, reviewer_role):
        config = self.config(presenter_role, reviewer_role)
        caller, provider = validate_invocation(
            config, "reviewer#1", "presenter#1", "share_presentation"
        )
        assert (caller.name, provider.name) == ("reviewer", "presenter")

    def test_unmapped_caller(self, presenter_role, reviewer_role):
        config = self.config(presenter_role, reviewer_role)
        with pytest.raises(ValueError, match="not mapped"):
            validate_invocation(config, "reviewer#2", "presenter#1", "share_presentation")

    def test_service_not_exposed(self, presenter_role, reviewer_role):
        config = self.config(presenter_role, reviewer_role)
        with pytest.raises(ServiceNotExposed):
            validate_invocation(config, "reviewer#1", "presenter#1", "unknown_service")

    def test_service_not_provided(self, presenter_role, reviewer_role):
        # reviewer expects the service but also cannot provide it
        config = self.config(presenter_role, reviewer_role)
        with pytest.raises(ServiceNotProvided):
            validate_invocation(config, "reviewer#1", "reviewer#1", "share_presentation")

    def test_provider_gone(self, presenter_role, reviewer_role):
        config = self.config(presenter_role, reviewer_role)
        del config.delta["presenter#1"]
        with pytest.raises(ProviderGone):
            validate_invocation(config, "reviewer#1", "presenter#1", "share_presentation")

    def test_exposure_checked_before_provider_presence(self, presenter_role, reviewer_role):
        config = self.config(presenter_role, reviewer_role)
        del config.delta["presenter#1"]
        with pytest.raises(ServiceNotExposed):
            validate_invocation(config, "reviewer#1", "presenter#1", "nonexistent")


class TestMessageKinds:
    def test_wire_names(self):
        assert {k.value for k in MessageKind} == {
            "Cfp", "Bid", "Award", "Reject",
            "RoleOffer", "RoleRequest", "RoleGrant", "RoleDeny",
            "Leave", "ServiceCall", "ServiceResult",
        }
