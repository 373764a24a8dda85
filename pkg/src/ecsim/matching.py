"""Role-to-thing matching.

compute_delta is the production strategy: complete backtracking search for
the compulsory roles (so feasibility verdicts are exact), then greedy filling
of remaining instances in role declaration order with things in id order.
oracle_delta is an independent exhaustive enumeration used by tests to pin
the optimality gap of the greedy phase; it rejects problems above a small
size bound instead of silently taking forever.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

from .model import Role, Thing, ThingId, instance_id

ORACLE_MAX_ROLES = 6
ORACLE_MAX_THINGS = 6


class Infeasible(Exception):
    """No assignment covers every compulsory role."""

    def __init__(self, role_names: tuple[str, ...]):
        super().__init__(f"compulsory roles cannot all be filled: {', '.join(role_names)}")
        self.role_names = role_names


class ProblemTooLarge(Exception):
    """oracle_delta refuses problems beyond its exhaustive-search bound."""


@dataclass(frozen=True)
class MatchProblem:
    """Roles in declaration order against candidate things.

    Candidates are expected to be environment-induced already; this module
    only checks capabilities. allow_multi_role lets one thing hold instances
    of several roles (it can never hold two instances of the same role).
    """

    roles: tuple[Role, ...]
    things: tuple[Thing, ...]
    allow_multi_role: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "roles", tuple(self.roles))
        object.__setattr__(self, "things", tuple(self.things))
        names = [r.name for r in self.roles]
        if len(names) != len(set(names)):
            raise ValueError("duplicate role names in problem")
        ids = [t.id for t in self.things]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate thing ids in problem")


@dataclass(frozen=True)
class MatchResult:
    delta: Mapping[str, ThingId]
    unfilled_optional: frozenset[str]
    score: int = field(default=0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "delta", dict(self.delta))
        object.__setattr__(self, "score", len(self.delta))


def feasible(role: Role, thing: Thing) -> bool:
    """A thing can hold a role iff its capabilities cover every service the
    role provides."""
    return role.provided_types <= thing.capabilities


def _candidates(problem: MatchProblem) -> dict[str, list[ThingId]]:
    return {
        role.name: [t.id for t in sorted(problem.things, key=lambda t: t.id) if feasible(role, t)]
        for role in problem.roles
    }


def _result(problem: MatchProblem, delta: dict[str, ThingId]) -> MatchResult:
    filled = {r.name: 0 for r in problem.roles}
    for inst in delta:
        name = inst.rpartition("#")[0]
        filled[name] += 1
    unfilled = frozenset(
        r.name for r in problem.roles if not r.compulsory and filled[r.name] == 0
    )
    return MatchResult(delta=delta, unfilled_optional=unfilled)


def compute_delta(problem: MatchProblem) -> MatchResult:
    """Assign things to role instances.

    Compulsory roles get exactly one instance each through exhaustive
    backtracking (roles ordered by fewest candidates first, candidates by
    ThingId), so Infeasible is raised iff no cover exists. Remaining
    instance slots, including optional roles, are filled greedily in role
    declaration order. Deterministic for a fixed problem.
    """
    cands = _candidates(problem)
    compulsory = [r for r in problem.roles if r.compulsory]

    empty = tuple(r.name for r in compulsory if not cands[r.name])
    if empty:
        raise Infeasible(empty)

    order = sorted(
        range(len(compulsory)), key=lambda i: (len(cands[compulsory[i].name]), i)
    )
    assignment: dict[str, ThingId] = {}
    used: set[ThingId] = set()

    def assign(pos: int) -> bool:
        if pos == len(order):
            return True
        role = compulsory[order[pos]]
        for tid in cands[role.name]:
            if not problem.allow_multi_role and tid in used:
                continue
            assignment[role.name] = tid
            used.add(tid)
            if assign(pos + 1):
                return True
            used.discard(tid)
            del assignment[role.name]
        return False

    if not assign(0):
        raise Infeasible(tuple(r.name for r in compulsory))

    delta: dict[str, ThingId] = {}
    per_role_used: dict[str, set[ThingId]] = {r.name: set() for r in problem.roles}
    for role in compulsory:
        tid = assignment[role.name]
        delta[instance_id(role.name, 1)] = tid
        per_role_used[role.name].add(tid)

    # greedy phase: remaining instances, declaration order
    for role in problem.roles:
        cap = role.instance_cap(len(problem.things))
        start = len(per_role_used[role.name]) + 1
        for n in range(start, cap + 1):
            pick = next(
                (
                    tid
                    for tid in cands[role.name]
                    if tid not in per_role_used[role.name]
                    and (problem.allow_multi_role or tid not in used)
                ),
                None,
            )
            if pick is None:
                break
            delta[instance_id(role.name, n)] = pick
            per_role_used[role.name].add(pick)
            used.add(pick)

    return _result(problem, delta)


def _oracle_single_role(problem: MatchProblem) -> MatchResult:
    """Enumerate every thing -> (role | unassigned) map, keep the valid ones
    (feasibility, per-role caps, every compulsory role covered), and return
    the best by (score, lexicographically smallest canonical delta)."""
    roles = problem.roles
    things = sorted(problem.things, key=lambda t: t.id)
    caps = [r.instance_cap(len(things)) for r in roles]
    feas = [[feasible(r, t) for r in roles] for t in things]
    compulsory_idx = [i for i, r in enumerate(roles) if r.compulsory]

    best: tuple[int, tuple[tuple[str, ThingId], ...]] | None = None
    counts = [0] * len(roles)
    choice: list[int | None] = [None] * len(things)

    def canonical(ch: list[int | None]) -> tuple[tuple[str, ThingId], ...]:
        delta: list[tuple[str, ThingId]] = []
        for ri, role in sorted(enumerate(roles), key=lambda p: p[1].name):
            assigned = sorted(t.id for ti, t in enumerate(things) if ch[ti] == ri)
            for n, tid in enumerate(assigned, start=1):
                delta.append((instance_id(role.name, n), tid))
        return tuple(sorted(delta))

    def walk(ti: int) -> None:
        nonlocal best
        if ti == len(things):
            if any(counts[ci] == 0 for ci in compulsory_idx):
                return
            score = sum(counts)
            key = canonical(choice)
            if best is None or score > best[0] or (score == best[0] and key < best[1]):
                best = (score, key)
            return
        # remaining things (incl. this one) can't rescue an uncoverable role
        remaining = len(things) - ti
        deficit = sum(1 for ci in compulsory_idx if counts[ci] == 0)
        if deficit > remaining:
            return
        for ri in range(len(roles)):
            if feas[ti][ri] and counts[ri] < caps[ri]:
                counts[ri] += 1
                choice[ti] = ri
                walk(ti + 1)
                counts[ri] -= 1
        choice[ti] = None
        walk(ti + 1)

    walk(0)
    if best is None:
        starved = tuple(
            roles[ci].name
            for ci in compulsory_idx
            if not any(feas[ti][ci] for ti in range(len(things)))
        )
        raise Infeasible(starved or tuple(roles[ci].name for ci in compulsory_idx))
    return _result(problem, dict(best[1]))


def _oracle_multi_role(problem: MatchProblem) -> MatchResult:
    # Roles don't compete for things under the multi-role policy, so the
    # global optimum decomposes into independent per-role maxima.
    delta: dict[str, ThingId] = {}
    starved: list[str] = []
    things = sorted(problem.things, key=lambda t: t.id)
    for role in problem.roles:
        cands = [t.id for t in things if feasible(role, t)]
        if role.compulsory and not cands:
            starved.append(role.name)
            continue
        cap = role.instance_cap(len(things))
        for n, tid in enumerate(cands[:cap], start=1):
            delta[instance_id(role.name, n)] = tid
    if starved:
        raise Infeasible(tuple(starved))
    return _result(problem, delta)


def oracle_delta(problem: MatchProblem) -> MatchResult:
    """Exhaustive reference matcher. Raises ProblemTooLarge beyond
    6 roles x 6 things."""
    if len(problem.roles) > ORACLE_MAX_ROLES or len(problem.things) > ORACLE_MAX_THINGS:
        raise ProblemTooLarge(
            f"oracle bound is {ORACLE_MAX_ROLES} roles x {ORACLE_MAX_THINGS} things,"
            f" got {len(problem.roles)} x {len(problem.things)}"
        )
    if problem.allow_multi_role:
        return _oracle_multi_role(problem)
    return _oracle_single_role(problem)
