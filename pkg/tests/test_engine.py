import pytest

from ecsim import scenarios
from ecsim.engine import Orchestrator, run_scenario
from ecsim.scenario import from_dict, load_scenario


def of_kind(records, kind, **match):
    out = []
    for rec in records:
        if rec["kind"] != kind:
            continue
        if all(rec.get(k) == v for k, v in match.items()):
            out.append(rec)
    return out


def one(records, kind, **match):
    found = of_kind(records, kind, **match)
    assert len(found) == 1, f"expected exactly one {kind} {match}, got {len(found)}"
    return found[0]


def index(records, rec):
    return records.index(rec)


@pytest.fixture(scope="module")
def mesh():
    return run_scenario(load_scenario(scenarios.path("mesh_presenter"))).records


@pytest.fixture(scope="module")
def relay():
    return run_scenario(load_scenario(scenarios.path("auction_relay"))).records


@pytest.fixture(scope="module")
def jogging():
    return run_scenario(load_scenario(scenarios.path("jogging"))).records


class TestMeshPresenterRun:
    def test_run_start_first(self, mesh):
        assert mesh[0]["kind"] == "RunStart"
        assert mesh[0]["scenario"] == "mesh_presenter"
        assert mesh[0]["seed"] == 42

    def test_formation(self, mesh):
        formed = one(mesh, "ConfigFormed")
        assert formed["at_ms"] == 500
        assert formed["config"] == "mesh_presentation#1"
        assert formed["classification"] == "Hybrid"
        assert formed["state"] == "Operational"
        assert formed["goal_user"] == "carol"

    def test_formation_membership_is_sorted_and_in_range(self, mesh):
        joined = of_kind(mesh, "ThingJoined", via="formation")
        assert [r["thing"] for r in joined] == ["phone-B", "phone-C", "tablet-A"]

    def test_presenter_granted_at_formation(self, mesh):
        grant = one(mesh, "RoleGranted", role="presenter")
        assert grant["at_ms"] == 500
        assert (grant["instance"], grant["thing"], grant["via"]) == (
            "presenter#1", "tablet-A", "formation",
        )

    def test_early_request_denied_on_precondition(self, mesh):
        deny = one(mesh, "RoleDenied", thing="phone-C", reason="PreconditionUnmet")
        activity = of_kind(mesh, "ActivityRecognized", user="bob")[0]
        assert deny["at_ms"] < activity["at_ms"]

    def test_remote_thing_denied_environment(self, mesh):
        deny = one(mesh, "RoleDenied", thing="laptop-D")
        assert deny["reason"] == "NotInEnvironment"

    def test_event_then_activity_then_grant_per_user(self, mesh):
        for user, phone, instance in (("alice", "phone-B", "reviewer#1"), ("bob", "phone-C", "reviewer#2")):
            event = of_kind(mesh, "EventEmitted", tag="near_beacon", user=user)[0]
            activity = one(mesh, "ActivityRecognized", user=user)
            grant = one(mesh, "RoleGranted", thing=phone)
            assert activity["tag"] == "in_meeting"
            assert (grant["instance"], grant["via"]) == (instance, "request")
            assert index(mesh, event) < index(mesh, activity) < index(mesh, grant)

    def test_user_command_drives_local_invocation(self, mesh):
        invoked = of_kind(mesh, "ServiceInvoked", service="share_presentation", caller="tablet-A")
        assert len(invoked) == 1
        assert invoked[0]["at_ms"] == 4000
        assert invoked[0]["provider"] == "tablet-A"

    def test_broadcast_result_reaches_reviewers(self, mesh):
        delivered = of_kind(mesh, "MsgDelivered", msg_kind="ServiceResult", at_ms=4010)
        assert sorted(r["to"] for r in delivered) == ["phone-B", "phone-C"]

    def test_scripted_invocation_routes_to_provider(self, mesh):
        call = one(mesh, "ServiceInvoked", service="share_presentation", caller="phone-B")
        assert call["provider"] == "tablet-A"
        assert call["at_ms"] == 5010

    def test_collect_pulls_content_and_rebroadcasts(self, mesh):
        call = one(mesh, "ServiceInvoked", service="share_content")
        assert (call["caller"], call["provider"]) == ("tablet-A", "phone-B")
        assert call["result"]["content"] == "notes-b"
        assert call["decision"] == {"broadcast": True}
        later = [
            r for r in of_kind(mesh, "MsgDelivered", msg_kind="ServiceResult")
            if r["at_ms"] > call["at_ms"] and r["sender"] == "tablet-A"
        ]
        assert later, "collected content should be rebroadcast by the caller"

    def test_optional_leave_keeps_config_operational(self, mesh):
        left = one(mesh, "ThingLeft", thing="phone-B")
        assert left["reason"] == "leave"
        changes = [r for r in of_kind(mesh, "ConfigStateChanged") if r["at_ms"] <= left["at_ms"]]
        assert changes == []

    def test_compulsory_leave_dissolves(self, mesh):
        left = one(mesh, "ThingLeft", thing="tablet-A")
        assert left["at_ms"] == 9000
        changes = of_kind(mesh, "ConfigStateChanged")
        assert [(c["from"], c["to"], c["reason"]) for c in changes] == [
            ("Operational", "Forming", "compulsory_lost"),
            ("Forming", "Dissolved", "rematch_failed"),
        ]
        assert all(c["at_ms"] == 9000 for c in changes)

    def test_msg_ids_strictly_increase_per_sender(self, mesh):
        last: dict[str, int] = {}
        for rec in of_kind(mesh, "MsgSent"):
            sender = rec["sender"]
            assert rec["msg_id"] > last.get(sender, 0)
            last[sender] = rec["msg_id"]

    def test_deterministic_repeat(self, mesh):
        again = run_scenario(load_scenario(scenarios.path("mesh_presenter"))).records
        assert again == mesh


class TestAuctionRelayRun:
    def test_forms_in_forming_state(self, relay):
        formed = one(relay, "ConfigFormed")
        assert formed["state"] == "Forming"
        assert formed["config"] == "relay_pipeline#1"

    def test_cfp_goes_out_and_bids_return(self, relay):
        cfp = one(relay, "MsgSent", msg_kind="Cfp")
        assert cfp["to"] == "*"
        bids = of_kind(relay, "MsgSent", msg_kind="Bid")
        assert {b["sender"] for b in bids} == {"node-2", "node-3"}

    def test_highest_bid_wins_the_role(self, relay):
        grant = one(relay, "RoleGranted", role="relay", via="auction")
        assert grant["thing"] == "node-2"
        assert grant["at_ms"] == 1500
        change = one(relay, "ConfigStateChanged", reason="auction_complete")
        assert (change["from"], change["to"]) == ("Forming", "Operational")
        assert change["at_ms"] == 1500

    def test_losers_get_rejects(self, relay):
        award = one(relay, "MsgSent", msg_kind="Award")
        assert award["to"] == "node-2"
        rejects = of_kind(relay, "MsgSent", msg_kind="Reject")
        assert sorted(r["to"] for r in rejects) == ["node-1", "node-3"]

    def test_entry_offer_accepted(self, relay):
        joined = one(relay, "ThingJoined", thing="screen-1")
        assert joined["via"] == "entry"
        assert joined["at_ms"] == 3000
        grant = one(relay, "RoleGranted", thing="screen-1")
        assert (grant["role"], grant["via"]) == ("display", "offer")
        assert grant["at_ms"] == 3020

    def test_entry_offer_declined(self, relay):
        deny = one(relay, "RoleDenied", thing="screen-2")
        assert deny["reason"] == "Declined"
        assert deny["at_ms"] == 4020

    def test_entry_offer_timeout(self, relay):
        deny = one(relay, "RoleDenied", thing="screen-3")
        assert deny["reason"] == "Timeout"
        # entered at 5000, offer sent, 2000ms handshake timeout
        assert deny["at_ms"] == 7000

    def test_service_call_across_things(self, relay):
        call = one(relay, "ServiceInvoked", service="display_frame")
        assert (call["caller"], call["provider"]) == ("node-2", "screen-1")
        assert call["at_ms"] == 8010

    def test_leave_triggers_rematch_promotion(self, relay):
        left = one(relay, "ThingLeft", thing="node-2")
        assert left["at_ms"] == 9000
        regrant = one(relay, "RoleGranted", via="rematch")
        assert (regrant["role"], regrant["thing"]) == ("relay", "node-1")
        changes = [
            (c["from"], c["to"], c["reason"])
            for c in of_kind(relay, "ConfigStateChanged")
            if c["at_ms"] == 9000
        ]
        assert changes == [
            ("Operational", "Forming", "compulsory_lost"),
            ("Forming", "Operational", "rematch"),
        ]


class TestJoggingRun:
    def test_event_cascade(self, jogging):
        events = of_kind(jogging, "EventEmitted")
        assert [(e["tag"], e["window_start"], e["window_end"]) for e in events] == [
            ("accelerating_speed", 0, 5000),
            ("entered_park", 5000, 10000),
            ("increased_speed", 10000, 15000),
        ]
        # the park-entry window closes only when the next reading arrives
        assert [e["at_ms"] for e in events] == [5000, 10500, 15000]

    def test_activity_recognized_once(self, jogging):
        act = one(jogging, "ActivityRecognized")
        assert act["tag"] == "jogging_in_park"
        assert (act["span_start"], act["span_end"]) == (5000, 15000)
        assert act["user"] == "runner"

    def test_no_configurations(self, jogging):
        assert of_kind(jogging, "ConfigFormed") == []


def tiny_doc(**overrides):
    data = {
        "schema_version": 1,
        "name": "tiny",
        "sim": {"seed": 3},
        "services": ["ping", "pong"],
        "things": [
            {
                "id": "t1",
                "capabilities": ["ping"],
                "attributes": {"location": [0, 0], "platform": "android", "protocols": ["mesh"]},
            },
            {
                "id": "t2",
                "capabilities": ["ping"],
                "attributes": {"location": [1, 0], "platform": "android", "protocols": ["mesh"]},
            },
        ],
        "roles": [
            {
                "name": "pinger",
                "compulsory": True,
                "services": [{"type_id": "ping", "direction": "provided"}],
            }
        ],
        "templates": [
            {
                "purpose": {"tag": "tiny"},
                "roles": ["pinger"],
                "environment": [{"kind": "within_radius", "center": [0, 0], "radius": 10}],
            }
        ],
        "goals": [
            {"at_ms": 100, "user": "u", "tag": "tiny", "required_capabilities": ["ping"]}
        ],
    }
    data.update(overrides)
    return data


def run_tiny(**overrides):
    return run_scenario(from_dict(tiny_doc(**overrides))).records


class TestEngineEdges:
    def test_goal_without_template_is_ignored(self):
        records = run_tiny(
            goals=[{"at_ms": 100, "user": "u", "tag": "other", "required_capabilities": ["pong"]}]
        )
        assert [r["kind"] for r in records] == ["RunStart"]

    def test_infeasible_formation_dissolves_immediately(self):
        things = tiny_doc()["things"]
        for t in things:
            t["capabilities"] = []
        records = run_tiny(things=things)
        formed = one(records, "ConfigFormed")
        assert formed["state"] == "Forming"
        change = one(records, "ConfigStateChanged")
        assert (change["to"], change["reason"]) == ("Dissolved", "infeasible")

    def test_move_out_of_environment_removes_and_rematches(self):
        records = run_tiny(moves=[{"at_ms": 1000, "thing": "t1", "to": [99, 0]}])
        left = one(records, "ThingLeft", thing="t1")
        assert left["reason"] == "left_environment"
        regrant = one(records, "RoleGranted", via="rematch")
        assert regrant["thing"] == "t2"

    def test_move_into_environment_joins(self):
        things = tiny_doc()["things"] + [
            {
                "id": "t3",
                "capabilities": ["pong"],
                "attributes": {"location": [50, 0], "platform": "android", "protocols": ["mesh"]},
            }
        ]
        records = run_tiny(things=things, moves=[{"at_ms": 1000, "thing": "t3", "to": [2, 0]}])
        joined = one(records, "ThingJoined", thing="t3")
        assert (joined["via"], joined["at_ms"]) == ("entry", 1000)

    def test_remote_role_joinable_from_outside(self):
        things = tiny_doc()["things"] + [
            {
                "id": "t9",
                "capabilities": ["pong"],
                "attributes": {"location": [80, 0], "platform": "android", "protocols": ["mesh"]},
                "script": {"actions": [{"at_ms": 1000, "action": "request_role", "role": "archivist"}]},
            }
        ]
        roles = tiny_doc()["roles"] + [
            {
                "name": "archivist",
                "compulsory": False,
                "services": [
                    {"type_id": "pong", "direction": "provided", "requires_proximity": False}
                ],
            }
        ]
        templates = tiny_doc()["templates"]
        templates[0]["roles"] = ["pinger", "archivist"]
        records = run_tiny(things=things, roles=roles, templates=templates)
        grant = one(records, "RoleGranted", role="archivist")
        assert (grant["thing"], grant["via"]) == ("t9", "request")
        joined = one(records, "ThingJoined", thing="t9")
        assert joined["via"] == "request"

    def test_seed_override_lands_in_run_start(self):
        doc = from_dict(tiny_doc())
        records = run_scenario(doc, seed=777).records
        assert records[0]["seed"] == 777

    def test_step_to_runs_incrementally(self):
        doc = from_dict(tiny_doc())
        orch = Orchestrator(doc)
        orch.begin()
        orch.step_to(50)
        assert of_kind(orch.trace.records, "ConfigFormed") == []
        orch.step_to(200)
        assert len(of_kind(orch.trace.records, "ConfigFormed")) == 1
