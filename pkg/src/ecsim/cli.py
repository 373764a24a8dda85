"""Command line front end: run scenarios, validate them, summarize traces."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .engine import DEFAULT_MAX_TIME_MS, Orchestrator
from .scenario import ParseError, ValidationError, load_scenario
from .scenarios import bundled, resolve
from .trace import read_jsonl, render_table, summarize

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_RUNTIME = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ecsim",
        description="Deterministic simulator for role-based device coordination.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="simulate a scenario and write a JSONL trace")
    run_p.add_argument(
        "--scenario",
        required=True,
        help=f"path to a scenario file, or a bundled name: {', '.join(bundled())}",
    )
    run_p.add_argument("--seed", type=int, default=None, help="override the scenario's seed")
    run_p.add_argument(
        "--max-time", type=int, default=DEFAULT_MAX_TIME_MS, help="simulation horizon in ms"
    )
    run_p.add_argument("--trace", default="-", help="output path for the trace ('-' for stdout)")

    val_p = sub.add_parser("validate", help="parse and cross-check a scenario file")
    val_p.add_argument("--scenario", required=True, help="path or bundled name")

    sum_p = sub.add_parser("summarize", help="fold a trace into a per-configuration table")
    sum_p.add_argument("--trace", required=True, help="JSONL trace file to read")
    sum_p.add_argument(
        "--report-dir",
        default=None,
        help="also write summary.tsv and PNG figures into this directory",
    )
    return parser


def _load(ref: str):
    return load_scenario(resolve(ref))


def _cmd_run(args: argparse.Namespace) -> int:
    doc = _load(args.scenario)
    orch = Orchestrator(doc, seed=args.seed)
    trace = orch.run(args.max_time)
    if args.trace == "-":
        sys.stdout.write("\n".join(trace.to_lines()) + "\n")
    else:
        with open(args.trace, "w", encoding="utf-8") as fp:
            trace.write_jsonl(fp)
        print(f"wrote {len(trace.records)} records to {args.trace}", file=sys.stderr)
    return EXIT_OK


def _cmd_validate(args: argparse.Namespace) -> int:
    doc = _load(args.scenario)
    print(
        f"ok: {doc.name}: {len(doc.things)} things, {len(doc.roles)} roles, "
        f"{len(doc.templates)} templates"
    )
    return EXIT_OK


def _cmd_summarize(args: argparse.Namespace) -> int:
    records = read_jsonl(args.trace)
    table = render_table(summarize(records))
    sys.stdout.write(table)
    if args.report_dir is not None:
        from .report import write_report

        written = write_report(records, args.report_dir)
        for path in written:
            print(f"wrote {path}", file=sys.stderr)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = {"run": _cmd_run, "validate": _cmd_validate, "summarize": _cmd_summarize}[args.command]
    try:
        return handler(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValidationError as exc:
        print(f"error: invalid scenario:\n{exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # surfaced with a stable exit code for scripting
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
