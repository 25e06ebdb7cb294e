"""Command-line front end.

Three subcommands work on a pipeline definition file:

    pipesim analyze   <file>    reservation table, forbidden latencies, MAL
    pipesim run       <file>    simulate inputs through the pipeline
    pipesim elaborate <file>    emit the module graph as DOT

Reports go to stdout, diagnostics to stderr.  Exit codes: 0 success,
1 parse/validation/configuration error, 2 deadlock, 3 horizon reached.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import analysis, report, simulate
from .elaborate import Netlist, elaborate, to_dot
from .engine import DeadlockError
from .errors import PipelineError
from .fileformat import PipelineSetup, load_pipeline_file
from .policy import CheckedConfig, IssueSpec, validate_config

__all__ = ["main", "console_main", "run_and_report"]

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DEADLOCK = 2
EXIT_HORIZON = 3


class _ArgumentParser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; 2 is reserved for deadlocks here.
    def error(self, message):
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="pipesim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_analyze = sub.add_parser("analyze", help="derive scheduling quantities")
    p_analyze.add_argument("file", help="pipeline definition file")
    p_analyze.add_argument(
        "--format", choices=("text", "json-like"), default="text", dest="fmt"
    )

    p_run = sub.add_parser("run", help="simulate transactions through the pipeline")
    p_run.add_argument("file", help="pipeline definition file")
    p_run.add_argument(
        "--inputs",
        required=True,
        help="comma separated orig values, or a path to a file of values",
    )
    p_run.add_argument("--issue", help="greedy, eager, or fixed:<interval>")
    p_run.add_argument("--horizon", type=int, help="stop after this many ns")
    p_run.add_argument("--trace", help="write the CSV transaction trace here")
    p_run.add_argument(
        "--format", choices=("text", "json-like"), default="text", dest="fmt"
    )
    p_run.add_argument("--type", dest="txn_type", help="pipeline name to run")

    p_elab = sub.add_parser("elaborate", help="emit the module graph as DOT")
    p_elab.add_argument("file", help="pipeline definition file")
    p_elab.add_argument("--dot", help="write DOT here instead of stdout")
    p_elab.add_argument("--type", dest="txn_type", help="pipeline name to elaborate")

    return parser


def _select_pipeline(setup: PipelineSetup, txn_type: str | None) -> str:
    names = list(setup.pipelines)
    if txn_type is not None:
        if txn_type not in setup.pipelines:
            raise PipelineError(
                f"unknown pipeline type {txn_type!r}; available: {', '.join(names)}"
            )
        return txn_type
    if len(names) > 1:
        raise PipelineError(
            f"file defines several pipelines ({', '.join(names)}); pick one with --type"
        )
    return names[0]


def _parse_inputs(spec: str) -> list[float]:
    path = Path(spec)
    if path.exists() and not spec.replace(".", "").replace(",", "").isdigit():
        text = path.read_text(encoding="utf-8")
    else:
        text = spec
    values = []
    for part in text.replace(",", " ").split():
        try:
            values.append(float(part))
        except ValueError:
            raise PipelineError(f"input value {part!r} is not a number") from None
    if not values:
        raise PipelineError("no input values given")
    return values


def _parse_issue(spec: str) -> IssueSpec:
    if spec == "greedy":
        return IssueSpec.greedy()
    if spec == "eager":
        return IssueSpec.eager()
    if spec.startswith("fixed:"):
        try:
            return IssueSpec.fixed(int(spec.split(":", 1)[1]))
        except ValueError:
            raise PipelineError(f"bad fixed issue interval in {spec!r}") from None
    raise PipelineError(f"unknown issue policy {spec!r}; use greedy, eager or fixed:<k>")


def run_and_report(
    netlist: Netlist,
    checked: CheckedConfig,
    inputs: list[float],
    issue: IssueSpec,
    horizon_ns: int | None,
    name: str,
    fmt: str,
    out=None,
    err=None,
    trace_path: str | None = None,
) -> int:
    """Execute one run and emit its report; returns the process exit code."""
    out = out if out is not None else sys.stdout
    err = err if err is not None else sys.stderr
    analysis_report = analysis.analyze(netlist.route)
    try:
        result = simulate.run(
            netlist, checked, inputs, issue=issue, horizon_ns=horizon_ns
        )
    except DeadlockError as exc:
        print(str(exc), file=err)
        return EXIT_DEADLOCK
    for warning in result.warnings:
        print(f"warning: {warning}", file=err)
    if fmt == "json-like":
        mapping = report.run_report_mapping(name, result, analysis_report, issue)
        print(report.canonical(mapping), file=out)
    else:
        out.write(report.run_report_text(name, result, analysis_report, issue))
    if trace_path is not None:
        Path(trace_path).write_text(report.trace_to_csv(result.trace), encoding="utf-8")
    return EXIT_HORIZON if result.stats.truncated else EXIT_OK


def _cmd_analyze(args) -> int:
    setup = load_pipeline_file(args.file)
    if args.fmt == "json-like":
        mapping = {
            "format_version": report.FORMAT_VERSION,
            "pipelines": {
                name: analysis.analyze(route, setup.decls).to_mapping()
                for name, route in setup.routes.items()
            },
        }
        print(report.canonical(mapping))
        return EXIT_OK
    chunks = []
    for name, route in setup.routes.items():
        chunks.append(report.analysis_text(name, analysis.analyze(route, setup.decls)))
    sys.stdout.write("\n".join(chunks))
    return EXIT_OK


def _cmd_run(args) -> int:
    setup = load_pipeline_file(args.file)
    name = _select_pipeline(setup, args.txn_type)
    route = setup.routes[name]
    inputs = _parse_inputs(args.inputs)
    if args.issue is not None:
        issue = _parse_issue(args.issue)
    elif setup.issue is not None:
        issue = setup.issue
    else:
        issue = IssueSpec.greedy()
    checked = validate_config(route, setup.configs, join=setup.join)
    netlist = elaborate(route, setup.decls)
    return run_and_report(
        netlist,
        checked,
        inputs,
        issue,
        args.horizon,
        name,
        args.fmt,
        trace_path=args.trace,
    )


def _cmd_elaborate(args) -> int:
    setup = load_pipeline_file(args.file)
    name = _select_pipeline(setup, args.txn_type)
    route = setup.routes[name]
    validate_config(route, setup.configs, join=setup.join)
    netlist = elaborate(route, setup.decls)
    dot = to_dot(netlist)
    if args.dot is not None:
        Path(args.dot).write_text(dot, encoding="utf-8")
    else:
        sys.stdout.write(dot)
    return EXIT_OK


_COMMANDS = {
    "analyze": _cmd_analyze,
    "run": _cmd_run,
    "elaborate": _cmd_elaborate,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except DeadlockError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_DEADLOCK
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
