"""Shared builders: a small meeting-room world used across test modules."""
from __future__ import annotations

import pytest

from ecsim.model import (
    Condition,
    ConditionKind,
    Direction,
    Environment,
    Necessity,
    PurposeTag,
    Role,
    ServiceSpec,
    SupportsProtocol,
    Thing,
    WithinRadius,
)

PRESENTER_SERVICES = (
    "share_presentation",
    "add_remove_reviewer",
    "enable_presenter_control",
)


def make_thing(tid, caps=(), location=(0.0, 0.0), **attrs):
    attributes = {
        "location": tuple(location),
        "platform": attrs.pop("platform", "android"),
        "protocols": attrs.pop("protocols", ["mesh"]),
    }
    attributes.update(attrs)
    return Thing(id=tid, capabilities=frozenset(caps), attributes=attributes)


def spec(type_id, direction, necessity=Necessity.MANDATORY, requires_proximity=True):
    return ServiceSpec(
        type_id=type_id,
        direction=Direction(direction),
        necessity=necessity,
        requires_proximity=requires_proximity,
    )


def make_role(name, compulsory, provided=(), expected=(), **kw):
    services = tuple(spec(t, "provided") for t in provided) + tuple(
        spec(t, "expected") for t in expected
    )
    return Role(name=name, compulsory=compulsory, services=services, **kw)


@pytest.fixture
def presenter_role():
    share = Condition(ConditionKind.USER_COMMAND, "share")
    collect = Condition(ConditionKind.USER_COMMAND, "collect")
    return Role(
        name="presenter",
        compulsory=True,
        services=tuple(spec(t, "provided") for t in PRESENTER_SERVICES)
        + (spec("share_content", "expected"),),
        conditions=frozenset({share, collect}),
        invocation_table={share: "share_presentation", collect: "share_content"},
        max_instances=1,
    )


@pytest.fixture
def reviewer_role():
    return Role(
        name="reviewer",
        compulsory=False,
        services=(spec("share_content", "provided"),)
        + tuple(spec(t, "expected") for t in PRESENTER_SERVICES),
        precondition=Condition(ConditionKind.ACTIVITY_RECOGNIZED, "in_meeting"),
    )


@pytest.fixture
def room_env():
    return Environment(
        (WithinRadius(center=(0.0, 0.0), radius=10.0), SupportsProtocol(name="mesh"))
    )


@pytest.fixture
def room_things():
    return {
        "tablet-A": make_thing("tablet-A", PRESENTER_SERVICES, (0, 1), owner="carol"),
        "phone-B": make_thing("phone-B", ["share_content"], (1, 0), owner="alice"),
        "phone-C": make_thing("phone-C", ["share_content"], (1, 1), owner="bob"),
        "laptop-D": make_thing("laptop-D", ["share_content"], (500, 0), owner="dave"),
    }


@pytest.fixture
def meeting_purpose():
    return PurposeTag(tag="mesh_presentation", required_capabilities=frozenset({"share_presentation"}))
