"""Run traces: an append-only record list with a fixed kind vocabulary,
JSONL serialization with deterministic bytes, and the summarize fold."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

KINDS = (
    "RunStart",
    "MsgSent",
    "MsgDelivered",
    "MsgDropped",
    "EventEmitted",
    "ActivityRecognized",
    "ConfigFormed",
    "RoleGranted",
    "RoleDenied",
    "ThingJoined",
    "ThingLeft",
    "ServiceInvoked",
    "ConfigStateChanged",
)

# fields every record of a kind must carry, beyond at_ms and kind
REQUIRED_FIELDS: Mapping[str, frozenset[str]] = {
    "RunStart": frozenset({"seed", "scenario", "schema_version"}),
    "MsgSent": frozenset({"msg_id", "sender", "to", "msg_kind"}),
    "MsgDelivered": frozenset({"msg_id", "sender", "to", "msg_kind"}),
    "MsgDropped": frozenset({"msg_id", "sender", "to", "msg_kind"}),
    "EventEmitted": frozenset({"tag", "source", "window_start", "window_end"}),
    "ActivityRecognized": frozenset({"tag", "user", "span_start", "span_end"}),
    "ConfigFormed": frozenset({"config", "purpose", "classification", "state"}),
    "RoleGranted": frozenset({"config", "role", "instance", "thing", "via"}),
    "RoleDenied": frozenset({"config", "role", "thing", "reason"}),
    "ThingJoined": frozenset({"config", "thing", "via"}),
    "ThingLeft": frozenset({"config", "thing", "reason"}),
    "ServiceInvoked": frozenset({"config", "service", "caller", "provider"}),
    "ConfigStateChanged": frozenset({"config", "from", "to", "reason"}),
}


class TraceError(ValueError):
    pass


@dataclass
class Trace:
    records: list[dict] = field(default_factory=list)

    def emit(self, at_ms: int, kind: str, **fields: object) -> dict:
        if kind not in REQUIRED_FIELDS:
            raise TraceError(f"unknown trace kind {kind!r}")
        missing = REQUIRED_FIELDS[kind] - fields.keys()
        if missing:
            raise TraceError(f"{kind} record missing fields: {sorted(missing)}")
        if self.records and at_ms < self.records[-1]["at_ms"]:
            raise TraceError(
                f"record at t={at_ms} would break trace time monotonicity"
                f" (last was t={self.records[-1]['at_ms']})"
            )
        record = {"at_ms": int(at_ms), "kind": kind, **fields}
        self.records.append(record)
        return record

    def to_lines(self) -> list[str]:
        return [json.dumps(r, sort_keys=True) for r in self.records]

    def write_jsonl(self, fp: IO[str]) -> None:
        for line in self.to_lines():
            fp.write(line + "\n")

    def to_bytes(self) -> bytes:
        return ("\n".join(self.to_lines()) + "\n").encode("utf-8") if self.records else b""


def read_jsonl(path: str | Path) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fp:
        for lineno, line in enumerate(fp, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise TraceError(f"line {lineno}: not valid JSON ({exc.msg})") from exc
    return records


def validate_record(record: Mapping[str, object]) -> list[str]:
    """Problem list for one parsed record; empty means well-formed."""
    problems = []
    kind = record.get("kind")
    if not isinstance(kind, str) or kind not in REQUIRED_FIELDS:
        problems.append(f"unknown kind {kind!r}")
        return problems
    at = record.get("at_ms")
    if not isinstance(at, int) or isinstance(at, bool) or at < 0:
        problems.append(f"at_ms must be a nonnegative integer, got {at!r}")
    missing = REQUIRED_FIELDS[kind] - record.keys()
    if missing:
        problems.append(f"{kind} missing fields: {sorted(missing)}")
    return problems


@dataclass(frozen=True)
class ConfigSummary:
    config: str
    purpose: str
    classification: str
    formed_at_ms: int
    final_state: str
    grants: int
    denies: int
    joins: int
    leaves: int
    invocations: int


SUMMARY_COLUMNS = (
    "config",
    "purpose",
    "classification",
    "formed_at_ms",
    "final_state",
    "grants",
    "denies",
    "joins",
    "leaves",
    "invocations",
)


def summarize(records: Sequence[Mapping[str, object]]) -> list[ConfigSummary]:
    """Pure fold over trace records producing one row per configuration."""
    formed: dict[str, dict] = {}
    counters: dict[str, dict[str, int]] = {}
    final_state: dict[str, str] = {}
    order: list[str] = []

    for rec in records:
        kind = rec.get("kind")
        cid = rec.get("config")
        if kind == "ConfigFormed" and isinstance(cid, str):
            formed[cid] = dict(rec)
            counters[cid] = {"grants": 0, "denies": 0, "joins": 0, "leaves": 0, "invocations": 0}
            final_state[cid] = str(rec.get("state", ""))
            order.append(cid)
        elif isinstance(cid, str) and cid in counters:
            if kind == "RoleGranted":
                counters[cid]["grants"] += 1
            elif kind == "RoleDenied":
                counters[cid]["denies"] += 1
            elif kind == "ThingJoined":
                counters[cid]["joins"] += 1
            elif kind == "ThingLeft":
                counters[cid]["leaves"] += 1
            elif kind == "ServiceInvoked":
                counters[cid]["invocations"] += 1
            elif kind == "ConfigStateChanged":
                final_state[cid] = str(rec.get("to", ""))

    return [
        ConfigSummary(
            config=cid,
            purpose=str(formed[cid].get("purpose", "")),
            classification=str(formed[cid].get("classification", "")),
            formed_at_ms=int(formed[cid]["at_ms"]),
            final_state=final_state[cid],
            grants=counters[cid]["grants"],
            denies=counters[cid]["denies"],
            joins=counters[cid]["joins"],
            leaves=counters[cid]["leaves"],
            invocations=counters[cid]["invocations"],
        )
        for cid in order
    ]


def render_table(summaries: Iterable[ConfigSummary]) -> str:
    """Tab-separated summary, one line per configuration plus a header."""
    lines = ["\t".join(SUMMARY_COLUMNS)]
    for s in summaries:
        lines.append("\t".join(str(getattr(s, col)) for col in SUMMARY_COLUMNS))
    return "\n".join(lines) + "\n"
