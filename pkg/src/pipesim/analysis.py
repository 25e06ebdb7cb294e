"""Scheduling analysis of routes.

A route is a compact reservation table: stage S is busy at step i exactly
when S is a member of step i.  From the table this module derives

* the forbidden latency set: issue-time differences that would make two
  transactions demand the same stage in the same cycle,
* the collision vector over latencies 1..L-1,
* the greedy issue cycle, and
* the minimal average latency (MAL), the best sustainable issue rate.

MAL is computed exactly, as the minimum mean cycle of the collision-state
graph.  States are collision vectors reachable from the initial vector under
the shifted-OR transition; any latency of at least L returns to the initial
state, so latencies beyond L never need explicit states.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping

from .dsl import ExprLike, Route, StageId, StageSet, flatten
from .errors import PipelineError

__all__ = [
    "AnalysisError",
    "ReservationTable",
    "CollisionVector",
    "IssueCycle",
    "AnalysisReport",
    "reservation_table",
    "forbidden_latencies",
    "collision_vector",
    "greedy_cycle",
    "minimal_average_latency",
    "analyze",
]


class AnalysisError(PipelineError):
    """An analysis input violates its preconditions."""


# ---------------------------------------------------------------------------
# Reservation table


@dataclass(frozen=True)
class ReservationTable:
    """Stage-by-step usage marks for one route.

    ``marks[s]`` is the sorted tuple of step indices at which stage ``s`` is
    busy; every step index in 0..length-1 is covered by at least one stage.
    """

    stages: tuple[StageId, ...]
    length: int
    marks: Mapping[StageId, tuple[int, ...]]

    def marks_of(self, stage: StageId) -> tuple[int, ...]:
        return self.marks[stage]

    def max_row_marks(self) -> int:
        """Maximum number of marks in any row; a lower bound on MAL."""
        return max(len(m) for m in self.marks.values())

    def ascii_grid(self) -> str:
        """Render the table as text: rows are stages, columns steps, X marks."""
        name_width = max(len(s.name) for s in self.stages)
        widths = [len(str(i)) for i in range(self.length)]
        header = " " * name_width + "  " + " ".join(
            str(i).rjust(w) for i, w in zip(range(self.length), widths)
        )
        lines = [header]
        for stage in self.stages:
            row = set(self.marks[stage])
            cells = " ".join(
                ("X" if i in row else ".").rjust(w) for i, w in zip(range(self.length), widths)
            )
            lines.append(stage.name.ljust(name_width) + "  " + cells)
        return "\n".join(lines)


def reservation_table(route: Route, decls: StageSet | None = None) -> ReservationTable:
    """Build the reservation table of a route.

    ``decls``, when given, is used to check that every stage in the route was
    actually declared.
    """
    if decls is not None:
        for stage in route.stages:
            if stage not in decls:
                raise AnalysisError(f"stage {stage.name!r} is not in the declaration set")
    stages = route.stages
    marks = {
        stage: tuple(i for i, step in enumerate(route.steps) if stage in step)
        for stage in stages
    }
    return ReservationTable(stages=stages, length=len(route), marks=marks)


def forbidden_latencies(table: ReservationTable) -> frozenset[int]:
    """All pairwise mark differences within a single stage's row.

    Latency 0 (two issues in the same cycle) is always forbidden and is not
    stored.
    """
    forbidden: set[int] = set()
    for marks in table.marks.values():
        for i, earlier in enumerate(marks):
            for later in marks[i + 1 :]:
                forbidden.add(later - earlier)
    return frozenset(forbidden)


# ---------------------------------------------------------------------------
# Collision vector


@dataclass(frozen=True)
class CollisionVector:
    """Forbidden latencies 1..L-1 as bits, lowest latency first.

    ``bits[d-1]`` is True exactly when latency ``d`` is forbidden.
    """

    length: int
    bits: tuple[bool, ...]

    def __post_init__(self):
        if len(self.bits) != max(self.length - 1, 0):
            raise AnalysisError("collision vector must have one bit per latency 1..L-1")

    def is_forbidden(self, latency: int) -> bool:
        if 1 <= latency < self.length:
            return self.bits[latency - 1]
        return latency == 0

    @property
    def forbidden(self) -> frozenset[int]:
        return frozenset(d for d in range(1, self.length) if self.bits[d - 1])

    def bitstring(self) -> str:
        return "".join("1" if b else "0" for b in self.bits)


def collision_vector(forbidden: frozenset[int], length: int) -> CollisionVector:
    """Transcribe a forbidden-latency set into its collision vector."""
    if any(d >= length or d < 1 for d in forbidden):
        raise AnalysisError(
            f"forbidden latencies {sorted(forbidden)} out of range for table length {length}"
        )
    bits = tuple(d in forbidden for d in range(1, length))
    return CollisionVector(length=length, bits=bits)


# ---------------------------------------------------------------------------
# Issue cycles


@dataclass(frozen=True)
class IssueCycle:
    """A repeating sequence of issue latencies."""

    latencies: tuple[int, ...]

    def __post_init__(self):
        if not self.latencies:
            raise AnalysisError("an issue cycle must contain at least one latency")

    @property
    def average(self) -> Fraction:
        return Fraction(sum(self.latencies), len(self.latencies))

    def describe(self) -> str:
        body = ",".join(str(d) for d in self.latencies)
        return f"({body})"


def _state_graph(vector: CollisionVector):
    """Collision states reachable from the initial vector.

    Returns (states, edges) where states[0] is the initial state and
    edges[i] lists (destination index, latency) pairs in ascending latency
    order.  Latency L is modeled explicitly as the restart edge; larger
    latencies are never cheaper.
    """
    length = vector.length
    initial = 0
    for d in range(1, length):
        if vector.bits[d - 1]:
            initial |= 1 << d
    index = {initial: 0}
    states = [initial]
    edges: list[list[tuple[int, int]]] = []
    frontier = [initial]
    while frontier:
        next_frontier = []
        for state in frontier:
            out = []
            for d in range(1, length + 1):
                if d < length and state & (1 << d):
                    continue
                dest = ((state >> d) | initial) if d < length else initial
                if dest not in index:
                    index[dest] = len(states)
                    states.append(dest)
                    next_frontier.append(dest)
                out.append((index[dest], d))
            edges.append(out)
        frontier = next_frontier
    return states, edges


def greedy_cycle(vector: CollisionVector) -> IssueCycle:
    """Issue cycle obtained by always taking the smallest permissible latency."""
    length = vector.length
    initial = 0
    for d in range(1, length):
        if vector.bits[d - 1]:
            initial |= 1 << d
    seen = {initial: 0}
    latencies: list[int] = []
    state = initial
    while True:
        for d in range(1, length):
            if not state & (1 << d):
                break
        else:
            d = length
        state = ((state >> d) | initial) if d < length else initial
        latencies.append(d)
        if state in seen:
            return IssueCycle(tuple(latencies[seen[state] :]))
        seen[state] = len(latencies)


def minimal_average_latency(vector: CollisionVector) -> IssueCycle:
    """An issue cycle of minimal average latency (MAL).

    Uses Karp's minimum mean cycle over the reachable collision-state graph,
    then extracts a concrete cycle from the tight subgraph of the reweighted
    shortest-path potentials.  Repeating the returned cycle from an empty
    pipeline is always conflict-free: states reached from the initial vector
    are subsets of the states reached along the cycle itself, so every
    latency of the cycle stays permissible.
    """
    states, edges = _state_graph(vector)
    n = len(states)

    # Karp: d_table[k][v] = min weight of an exactly-k-edge walk 0 -> v.
    inf = None
    d_table = [[inf] * n for _ in range(n + 1)]
    d_table[0][0] = 0
    for k in range(1, n + 1):
        prev = d_table[k - 1]
        cur = d_table[k]
        for u in range(n):
            base = prev[u]
            if base is None:
                continue
            for v, w in edges[u]:
                cand = base + w
                if cur[v] is None or cand < cur[v]:
                    cur[v] = cand
    mal: Fraction | None = None
    last = d_table[n]
    for v in range(n):
        if last[v] is None:
            continue
        best_for_v: Fraction | None = None
        for k in range(n):
            dk = d_table[k][v]
            if dk is None:
                continue
            ratio = Fraction(last[v] - dk, n - k)
            if best_for_v is None or ratio > best_for_v:
                best_for_v = ratio
        if best_for_v is not None and (mal is None or best_for_v < mal):
            mal = best_for_v
    assert mal is not None, "the restart latency always closes a cycle"

    # Bellman-Ford potentials for weights (w - mal); the minimum mean is mal,
    # so there is no negative cycle and a zero-total cycle exists.  Edges with
    # pot[u] + (w - mal) == pot[v] form the tight subgraph; every cycle inside
    # it telescopes to total zero, i.e. has average exactly mal.
    pot: list[Fraction | None] = [None] * n
    pot[0] = Fraction(0)
    for _ in range(n - 1):
        changed = False
        for u in range(n):
            if pot[u] is None:
                continue
            for v, w in edges[u]:
                cand = pot[u] + w - mal
                if pot[v] is None or cand < pot[v]:
                    pot[v] = cand
                    changed = True
        if not changed:
            break

    tight: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for u in range(n):
        if pot[u] is None:
            continue
        for v, w in edges[u]:
            if pot[v] is not None and pot[u] + w - mal == pot[v]:
                tight[u].append((v, w))

    cycle = _find_cycle(tight, n)
    assert cycle is not None, "tight subgraph always contains a cycle"
    result = IssueCycle(tuple(w for _, w in cycle))
    assert result.average == mal
    return result


def _find_cycle(adj: list[list[tuple[int, int]]], n: int):
    """First cycle found by DFS; returns the cycle as [(dest node, latency), ...]."""
    color = [0] * n  # 0 unvisited, 1 on stack, 2 done
    for start in range(n):
        if color[start] != 0:
            continue
        # Stack frames carry the edge taken into the node so the cycle's
        # latencies can be read straight off the path suffix.
        stack: list[tuple[int, int, int]] = [(start, 0, 0)]  # (node, next edge, latency in)
        color[start] = 1
        on_path = {start: 0}
        while stack:
            node, edge_idx, latency_in = stack[-1]
            if edge_idx < len(adj[node]):
                stack[-1] = (node, edge_idx + 1, latency_in)
                dest, weight = adj[node][edge_idx]
                if dest in on_path:
                    suffix = stack[on_path[dest] + 1 :]
                    cycle = [(frame[0], frame[2]) for frame in suffix]
                    cycle.append((dest, weight))
                    return cycle
                if color[dest] == 0:
                    color[dest] = 1
                    on_path[dest] = len(stack)
                    stack.append((dest, 0, weight))
            else:
                color[node] = 2
                stack.pop()
                on_path.pop(node, None)
    return None


# ---------------------------------------------------------------------------
# Composite report


@dataclass(frozen=True)
class AnalysisReport:
    """Everything the analysis derives from one route."""

    route: Route
    table: ReservationTable
    forbidden: tuple[int, ...]
    vector: CollisionVector
    greedy: IssueCycle
    mal_cycle: IssueCycle

    @property
    def mal(self) -> Fraction:
        return self.mal_cycle.average

    def to_mapping(self) -> dict:
        """Plain-data form used by the structured-text report."""
        return {
            "route": [sorted(s.name for s in step) for step in self.route.steps],
            "length": self.table.length,
            "marks": {s.name: list(self.table.marks[s]) for s in self.table.stages},
            "forbidden_latencies": list(self.forbidden),
            "collision_vector": self.vector.bitstring(),
            "greedy_cycle": {
                "latencies": list(self.greedy.latencies),
                "average": float(self.greedy.average),
            },
            "mal_cycle": {
                "latencies": list(self.mal_cycle.latencies),
                "average": float(self.mal_cycle.average),
            },
            "mal": float(self.mal),
            "mal_lower_bound": self.table.max_row_marks(),
        }


def analyze(expr: ExprLike | Route, decls: StageSet | None = None) -> AnalysisReport:
    """Run the full analysis pipeline for one expression or route."""
    route = expr if isinstance(expr, Route) else flatten(expr)
    table = reservation_table(route, decls)
    forbidden = forbidden_latencies(table)
    vector = collision_vector(forbidden, table.length)
    greedy = greedy_cycle(vector)
    mal_cycle = minimal_average_latency(vector)
    if mal_cycle.average < table.max_row_marks():
        raise AnalysisError(
            "internal error: MAL fell below the reservation-table lower bound"
        )
    return AnalysisReport(
        route=route,
        table=table,
        forbidden=tuple(sorted(forbidden)),
        vector=vector,
        greedy=greedy,
        mal_cycle=mal_cycle,
    )
