"""Netlist elaboration.

Expands a route into the simulatable module graph: one node per distinct
stage, one transaction router per stage output plus an entry router, and the
channels between them.  Stages keep exactly one input and one output; all
fan-out (forks, feedback) and fan-in happens in routers, each of which owns a
table mapping the step a transaction just completed to the next step's
stages, or to the exit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Union

from .dsl import Route, StageId, StageSet
from .errors import PipelineError
from .policy import ChannelKind

__all__ = [
    "ElaborationError",
    "EXIT",
    "RoutingTable",
    "RouterNode",
    "ChannelEdge",
    "Netlist",
    "elaborate",
    "routing_table",
    "to_dot",
    "router_name",
]

ENTRY = "entry"
EXIT_NODE = "exit"


class ElaborationError(PipelineError):
    """The route cannot be elaborated as requested."""


class _ExitMarker:
    """Sentinel destination: the transaction leaves the pipeline."""

    def __repr__(self) -> str:
        return "EXIT"


EXIT = _ExitMarker()

Destination = Union[frozenset, _ExitMarker]


@dataclass(frozen=True)
class RoutingTable:
    """Per-router forwarding table.

    Keys are the step indices a transaction has just completed when it
    reaches this router (-1 for fresh injections at the entry router); values
    are the stage set of the next step, or EXIT after the final step.
    """

    entries: Mapping[int, Destination]

    def lookup(self, completed_step: int) -> Destination | None:
        return self.entries.get(completed_step)

    def destinations(self) -> tuple[Destination, ...]:
        return tuple(self.entries[k] for k in sorted(self.entries))


@dataclass(frozen=True)
class RouterNode:
    name: str
    stage: StageId | None  # None for the entry router
    table: RoutingTable


@dataclass(frozen=True)
class ChannelEdge:
    """Directed channel between two netlist nodes (router/stage or markers)."""

    src: str
    dst: str
    kind: ChannelKind


@dataclass(frozen=True)
class Netlist:
    """Elaborated pipeline structure, ready for simulation or rendering."""

    route: Route
    stages: tuple[StageId, ...]
    routers: tuple[RouterNode, ...]
    edges: tuple[ChannelEdge, ...]
    entry: str = ENTRY
    exit: str = EXIT_NODE

    def router_of(self, stage: StageId) -> RouterNode:
        for router in self.routers:
            if router.stage == stage:
                return router
        raise ElaborationError(f"no router for stage {stage.name!r}")

    @property
    def entry_router(self) -> RouterNode:
        return self.routers[0]

    def has_edge(self, src: str, dst: str) -> bool:
        return any(e.src == src and e.dst == dst for e in self.edges)


def router_name(stage: StageId) -> str:
    return f"r_{stage.name}"


def routing_table(route: Route, stage: StageId) -> RoutingTable:
    """Forwarding table for the router attached to ``stage``'s output.

    For every step index i at which the stage is busy, the entry maps i to
    the stages of step i+1, or to EXIT when i is the final step.
    """
    entries: dict[int, Destination] = {}
    for i, step in enumerate(route.steps):
        if stage not in step:
            continue
        if i + 1 < len(route.steps):
            entries[i] = frozenset(route.steps[i + 1])
        else:
            entries[i] = EXIT
    if not entries:
        raise ElaborationError(f"stage {stage.name!r} does not appear in the route")
    return RoutingTable(entries=entries)


def elaborate(
    route: Route,
    decls: StageSet | None = None,
    channel_kind: ChannelKind = ChannelKind.BLOCKING,
) -> Netlist:
    """Expand a route into stage nodes, routers, and channel edges.

    A stage is instantiated once no matter how often the route reuses it;
    feedback is realized purely by routing.
    """
    if decls is not None:
        for stage in route.stages:
            if stage not in decls:
                raise ElaborationError(
                    f"stage {stage.name!r} is not in the declaration set"
                )
    stages = route.stages

    routers = [
        RouterNode(
            name=ENTRY,
            stage=None,
            table=RoutingTable(entries={-1: frozenset(route.steps[0])}),
        )
    ]
    for stage in stages:
        routers.append(
            RouterNode(
                name=router_name(stage),
                stage=stage,
                table=routing_table(route, stage),
            )
        )

    edges: list[ChannelEdge] = []
    seen: set[tuple[str, str]] = set()

    def add_edge(src: str, dst: str) -> None:
        if (src, dst) not in seen:
            seen.add((src, dst))
            edges.append(ChannelEdge(src=src, dst=dst, kind=channel_kind))

    for stage in sorted(route.steps[0], key=lambda s: s.ordinal):
        add_edge(ENTRY, stage.name)
    for stage in stages:
        add_edge(stage.name, router_name(stage))
    for router in routers[1:]:
        for dest in router.table.destinations():
            if dest is EXIT:
                add_edge(router.name, EXIT_NODE)
            else:
                for target in sorted(dest, key=lambda s: s.ordinal):
                    add_edge(router.name, target.name)

    return Netlist(
        route=route,
        stages=stages,
        routers=tuple(routers),
        edges=tuple(edges),
    )


def to_dot(netlist: Netlist) -> str:
    """Deterministic DOT rendering: stages as boxes, routers as circles."""
    lines = ["digraph pipeline {", "  rankdir=LR;"]
    lines.append(f'  "{netlist.entry}" [shape=circle];')
    for stage in netlist.stages:
        lines.append(f'  "{stage.name}" [shape=box];')
    for router in netlist.routers[1:]:
        lines.append(f'  "{router.name}" [shape=circle];')
    lines.append(f'  "{netlist.exit}" [shape=plaintext];')
    for edge in netlist.edges:
        style = "" if edge.kind is ChannelKind.BLOCKING else " [style=dashed]"
        lines.append(f'  "{edge.src}" -> "{edge.dst}"{style};')
    lines.append("}")
    return "\n".join(lines) + "\n"
