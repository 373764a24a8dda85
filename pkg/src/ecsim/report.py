"""Render a trace into a report directory: a TSV summary plus figures."""
from __future__ import annotations

from collections import Counter
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .trace import KINDS, render_table, summarize

SUMMARY_FILE = "summary.tsv"
TIMELINE_FILE = "timeline.png"
MESSAGE_FILE = "message_counts.png"
ROLE_FILE = "role_outcomes.png"


def write_report(records: list[dict], out_dir: str | Path) -> list[Path]:
    """Write summary.tsv and the three figures; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    summary_path = out / SUMMARY_FILE
    summary_path.write_text(render_table(summarize(records)), encoding="utf-8")
    written.append(summary_path)

    written.append(_timeline_figure(records, out / TIMELINE_FILE))
    written.append(_message_figure(records, out / MESSAGE_FILE))
    written.append(_role_figure(records, out / ROLE_FILE))
    return written


def _timeline_figure(records: list[dict], path: Path) -> Path:
    lanes = [k for k in KINDS if any(r.get("kind") == k for r in records)]
    fig, ax = plt.subplots(figsize=(10, max(2.5, 0.4 * len(lanes) + 1)))
    for i, kind in enumerate(lanes):
        xs = [r["at_ms"] for r in records if r.get("kind") == kind]
        ax.scatter(xs, [i] * len(xs), s=18, label=kind)
    ax.set_yticks(range(len(lanes)))
    ax.set_yticklabels(lanes)
    ax.set_xlabel("time (ms)")
    ax.set_title("trace timeline")
    ax.grid(axis="x", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def _message_figure(records: list[dict], path: Path) -> Path:
    counts: Counter[str] = Counter()
    for r in records:
        if r.get("kind") in ("MsgSent", "MsgDelivered", "MsgDropped"):
            counts[str(r.get("msg_kind", "?"))] += 1
    labels = sorted(counts)
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.bar(labels, [counts[l] for l in labels])
    ax.set_ylabel("records")
    ax.set_title("message traffic by kind")
    ax.tick_params(axis="x", rotation=30)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def _role_figure(records: list[dict], path: Path) -> Path:
    grants: Counter[str] = Counter()
    denies: Counter[str] = Counter()
    for r in records:
        if r.get("kind") == "RoleGranted":
            grants[str(r.get("role", "?"))] += 1
        elif r.get("kind") == "RoleDenied":
            denies[str(r.get("role", "?"))] += 1
    roles = sorted(set(grants) | set(denies))
    xs = range(len(roles))
    width = 0.4
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.bar([x - width / 2 for x in xs], [grants[r] for r in roles], width, label="granted")
    ax.bar([x + width / 2 for x in xs], [denies[r] for r in roles], width, label="denied")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(roles)
    ax.set_ylabel("count")
    ax.set_title("role grants and denials")
    if roles:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
