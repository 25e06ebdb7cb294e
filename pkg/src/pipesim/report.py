"""Report rendering: canonical structured text, human-readable text, CSV.

The structured-text format is a canonical JSON subset: object keys sorted,
reals printed with up to six significant digits, integers bare.  Identical
inputs therefore always serialize to identical bytes.
"""

from __future__ import annotations

import json
from fractions import Fraction
from typing import Mapping

from .analysis import AnalysisReport
from .policy import IssueSpec
from .simulate import RunResult, Trace

__all__ = [
    "format_real",
    "canonical",
    "trace_to_csv",
    "analysis_text",
    "analysis_mapping",
    "run_report_text",
    "run_report_mapping",
]

FORMAT_VERSION = 1


def format_real(value: float) -> str:
    """Up to six significant digits; integral reals print bare."""
    return "%.6g" % value


def canonical(obj, indent: int = 0) -> str:
    """Serialize plain data to the canonical structured-text form."""
    pad = "  " * indent
    if obj is None:
        return "null"
    if obj is True:
        return "true"
    if obj is False:
        return "false"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, (float, Fraction)):
        return format_real(float(obj))
    if isinstance(obj, Mapping):
        if not obj:
            return "{}"
        inner = "  " * (indent + 1)
        parts = [
            f"{inner}{json.dumps(str(key))}: {canonical(obj[key], indent + 1)}"
            for key in sorted(obj)
        ]
        return "{\n" + ",\n".join(parts) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        inner = "  " * (indent + 1)
        parts = [f"{inner}{canonical(item, indent + 1)}" for item in obj]
        return "[\n" + ",\n".join(parts) + "\n" + pad + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


# ---------------------------------------------------------------------------
# CSV trace


def trace_to_csv(trace: Trace) -> str:
    """One row per transaction; columns exactly id,inject_ns,exit_ns,orig,data."""
    lines = ["id,inject_ns,exit_ns,orig,data"]
    for rec in trace.records:
        inject = "" if rec.injected_at is None else str(rec.injected_at.ns)
        exit_ns = "" if rec.exited_at is None else str(rec.exited_at.ns)
        lines.append(
            f"{rec.txn_id},{inject},{exit_ns},"
            f"{format_real(rec.orig)},{format_real(rec.data)}"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Analysis report


def _cycle_text(cycle) -> str:
    return f"{cycle.describe()} average {format_real(float(cycle.average))}"


def analysis_text(name: str, report: AnalysisReport) -> str:
    lines = [f"pipeline {name}: {report.route.describe()}  ({len(report.route)} steps)"]
    lines.append("reservation table:")
    for row in report.table.ascii_grid().splitlines():
        lines.append(f"  {row}")
    forbidden = " ".join(str(d) for d in report.forbidden) if report.forbidden else "(none)"
    lines.append(f"forbidden latencies: {forbidden}")
    bits = report.vector.bitstring()
    lines.append(f"collision vector: {bits if bits else '(empty)'}")
    lines.append(f"greedy cycle: {_cycle_text(report.greedy)}")
    lines.append(f"MAL: {format_real(float(report.mal))}  cycle {report.mal_cycle.describe()}")
    return "\n".join(lines) + "\n"


def analysis_mapping(report: AnalysisReport) -> dict:
    return report.to_mapping()


# ---------------------------------------------------------------------------
# Run report


def run_report_mapping(
    name: str,
    result: RunResult,
    report: AnalysisReport,
    issue: IssueSpec,
) -> dict:
    stats = result.stats
    return {
        "format_version": FORMAT_VERSION,
        "pipeline": name,
        "issue": str(issue),
        "results": [
            {
                "id": rec.txn_id,
                "orig": rec.orig,
                "data": rec.data,
                "inject_ns": None if rec.injected_at is None else rec.injected_at.ns,
                "exit_ns": None if rec.exited_at is None else rec.exited_at.ns,
                "dropped": rec.dropped,
            }
            for rec in result.trace.records
        ],
        "stats": {
            "injected": stats.injected,
            "exited": stats.exited,
            "dropped": stats.dropped,
            "in_flight": stats.in_flight,
            "final_ns": stats.final_time.ns,
            "final_delta": stats.final_time.delta,
            "timed_waits": stats.timed_waits,
            "total_stalls": stats.total_stalls,
            "stalls_by_channel": dict(stats.stalls_by_channel),
            "drops_by_channel": dict(stats.drops_by_channel),
            "per_stage": {
                name: {
                    "items": st.items,
                    "busy_ns": st.busy_ns,
                    "stalls": st.stalls,
                }
                for name, st in stats.stage.items()
            },
            "throughput": stats.throughput,
            "truncated": stats.truncated,
        },
        "analysis": analysis_mapping(report),
        "warnings": list(result.warnings),
    }


def run_report_text(
    name: str,
    result: RunResult,
    report: AnalysisReport,
    issue: IssueSpec,
) -> str:
    stats = result.stats
    lines = [f"pipeline {name}: {report.route.describe()}"]
    lines.append(f"issue policy: {issue}")
    lines.append("transactions:")
    lines.append("  id  inject_ns  exit_ns  orig  data")
    for rec in result.trace.records:
        inject = "-" if rec.injected_at is None else str(rec.injected_at.ns)
        exit_ns = "-" if rec.exited_at is None else str(rec.exited_at.ns)
        flag = " (dropped)" if rec.dropped else ""
        lines.append(
            f"  {rec.txn_id:>2}  {inject:>9}  {exit_ns:>7}  "
            f"{format_real(rec.orig)}  {format_real(rec.data)}{flag}"
        )
    lines.append("stats:")
    lines.append(
        f"  injected={stats.injected} exited={stats.exited} "
        f"dropped={stats.dropped} in_flight={stats.in_flight}"
    )
    lines.append(f"  final time: {stats.final_time.ns} ns (+{stats.final_time.delta} delta)")
    lines.append(f"  timed waits: {stats.timed_waits}")
    lines.append(f"  total stalls: {stats.total_stalls}")
    for stage_name, st in stats.stage.items():
        lines.append(
            f"  {stage_name}: items={st.items} busy={st.busy_ns}ns stalls={st.stalls}"
        )
    if stats.truncated:
        lines.append("  NOTE: horizon reached, trace is partial")
    forbidden = " ".join(str(d) for d in report.forbidden) if report.forbidden else "(none)"
    lines.append("analysis:")
    lines.append(f"  forbidden latencies: {forbidden}")
    lines.append(f"  greedy cycle: {_cycle_text(report.greedy)}")
    lines.append(
        f"  MAL: {format_real(float(report.mal))}  cycle {report.mal_cycle.describe()}"
    )
    return "\n".join(lines) + "\n"
