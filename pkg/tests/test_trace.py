import json

import pytest

from ecsim.trace import (
    SUMMARY_COLUMNS,
    Trace,
    TraceError,
    read_jsonl,
    render_table,
    summarize,
    validate_record,
)


def left(at_ms, config="c#1", thing="t1", reason="leave"):
    return {"at_ms": at_ms, "kind": "ThingLeft", "config": config, "thing": thing, "reason": reason}


def formed(at_ms, config="c#1", state="Operational"):
    return {
        "at_ms": at_ms,
        "kind": "ConfigFormed",
        "config": config,
        "purpose": "demo",
        "classification": "Centralized",
        "state": state,
    }


class TestEmit:
    def test_builds_record_with_kind_and_time(self):
        trace = Trace()
        rec = trace.emit(5, "ThingLeft", config="c#1", thing="t1", reason="leave")
        assert rec == {"at_ms": 5, "kind": "ThingLeft", "config": "c#1", "thing": "t1", "reason": "leave"}
        assert trace.records == [rec]

    def test_unknown_kind_rejected(self):
        with pytest.raises(TraceError, match="unknown trace kind"):
            Trace().emit(0, "Mystery")

    def test_missing_required_fields_rejected(self):
        with pytest.raises(TraceError, match="missing fields"):
            Trace().emit(0, "ThingLeft", config="c#1")

    def test_extra_fields_allowed(self):
        rec = Trace().emit(0, "ThingLeft", config="c#1", thing="t1", reason="leave", detail="x")
        assert rec["detail"] == "x"

    def test_time_must_not_go_backwards(self):
        trace = Trace()
        trace.emit(10, "ThingLeft", config="c#1", thing="t1", reason="leave")
        with pytest.raises(TraceError, match="monotonicity"):
            trace.emit(9, "ThingLeft", config="c#1", thing="t1", reason="leave")

    def test_equal_times_fine(self):
        trace = Trace()
        trace.emit(10, "ThingLeft", config="c#1", thing="t1", reason="leave")
        trace.emit(10, "ThingLeft", config="c#1", thing="t2", reason="leave")
        assert len(trace.records) == 2


class TestSerialization:
    def test_lines_have_sorted_keys(self):
        trace = Trace()
        trace.emit(0, "ThingLeft", config="c#1", thing="t1", reason="leave")
        (line,) = trace.to_lines()
        assert line == json.dumps(json.loads(line), sort_keys=True)
        assert list(json.loads(line)) == sorted(json.loads(line))

    def test_empty_trace_is_empty_bytes(self):
        assert Trace().to_bytes() == b""

    def test_bytes_end_with_newline(self):
        trace = Trace()
        trace.emit(0, "ThingLeft", config="c#1", thing="t1", reason="leave")
        assert trace.to_bytes().endswith(b"\n")

    def test_jsonl_round_trip(self, tmp_path):
        trace = Trace()
        trace.emit(0, "ThingLeft", config="c#1", thing="t1", reason="leave")
        trace.emit(7, "ThingLeft", config="c#1", thing="t2", reason="leave")
        path = tmp_path / "run.jsonl"
        with open(path, "w", encoding="utf-8") as fp:
            trace.write_jsonl(fp)
        assert read_jsonl(path) == trace.records

    def test_read_skips_blank_lines(self, tmp_path):
        path = tmp_path / "run.jsonl"
        path.write_text('{"at_ms": 0}\n\n{"at_ms": 1}\n')
        assert len(read_jsonl(path)) == 2

    def test_read_reports_bad_line_number(self, tmp_path):
        path = tmp_path / "run.jsonl"
        path.write_text('{"at_ms": 0}\nnot json\n')
        with pytest.raises(TraceError, match="line 2"):
            read_jsonl(path)


class TestValidateRecord:
    def test_well_formed(self):
        assert validate_record(left(3)) == []

    def test_unknown_kind(self):
        problems = validate_record({"at_ms": 0, "kind": "Nope"})
        assert problems and "unknown kind" in problems[0]

    def test_missing_fields_listed(self):
        problems = validate_record({"at_ms": 0, "kind": "ThingLeft", "config": "c"})
        assert any("missing fields" in p for p in problems)

    def test_at_ms_must_be_nonnegative_int(self):
        assert validate_record({**left(0), "at_ms": -1})
        assert validate_record({**left(0), "at_ms": "0"})
        assert validate_record({**left(0), "at_ms": True})


class TestSummarize:
    def records(self):
        grant = {
            "at_ms": 20, "kind": "RoleGranted", "config": "c#1",
            "role": "r", "instance": "r#1", "thing": "t1", "via": "request",
        }
        deny = {
            "at_ms": 30, "kind": "RoleDenied", "config": "c#1",
            "role": "r", "thing": "t2", "reason": "NoSlot",
        }
        join = {"at_ms": 15, "kind": "ThingJoined", "config": "c#1", "thing": "t1", "via": "formation"}
        invoke = {
            "at_ms": 40, "kind": "ServiceInvoked", "config": "c#1",
            "service": "s", "caller": "t1", "provider": "t1",
        }
        change = {
            "at_ms": 50, "kind": "ConfigStateChanged", "config": "c#1",
            "from": "Operational", "to": "Dissolved", "reason": "x",
        }
        return [formed(10), join, grant, deny, invoke, left(45), change]

    def test_counts_and_final_state(self):
        (row,) = summarize(self.records())
        assert row.config == "c#1"
        assert row.formed_at_ms == 10
        assert (row.grants, row.denies, row.joins, row.leaves, row.invocations) == (1, 1, 1, 1, 1)
        assert row.final_state == "Dissolved"

    def test_state_defaults_to_formation_state(self):
        (row,) = summarize([formed(10, state="Forming")])
        assert row.final_state == "Forming"

    def test_records_before_formation_ignored(self):
        rows = summarize([left(5, config="ghost#1")])
        assert rows == []

    def test_two_configs_keep_formation_order(self):
        rows = summarize([formed(10, config="b#1"), formed(20, config="a#1")])
        assert [r.config for r in rows] == ["b#1", "a#1"]


class TestRenderTable:
    def test_header_and_rows_tab_separated(self):
        out = render_table(summarize(self.sample()))
        lines = out.splitlines()
        assert lines[0] == "\t".join(SUMMARY_COLUMNS)
        assert lines[1].split("\t")[0] == "c#1"
        assert out.endswith("\n")

    def sample(self):
        return [formed(10)]

    def test_empty_summary_is_header_only(self):
        assert render_table([]) == "\t".join(SUMMARY_COLUMNS) + "\n"
