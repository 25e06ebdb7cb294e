"""Transaction-level execution of an elaborated netlist.

Each stage and each router becomes a simulated process.  A stage perpetually
reads its input channel, applies its function, waits out its timing model,
advances the transaction's step counter, and writes its output.  The router
on a stage's output looks the transaction up in its table by the step just
completed and forwards it, duplicating on forks, collecting and merging
branch copies at joins, and retiring transactions at the exit.  The issue
process injects fresh transactions at the entry router according to the issue
policy.

Payloads are dynamically typed: ``orig`` and ``data`` are reals when driven
from the CLI, but library users may put any value in ``data`` as long as the
configured stage functions accept it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence, Union

from . import analysis
from .dsl import Route, StageId
from .elaborate import EXIT, Netlist, RouterNode
from .engine import (
    BlockingChannel,
    ChannelBase,
    Delay,
    Engine,
    JoinError,
    Peek,
    QueueChannel,
    Read,
    RoutingFault,
    SeveredChannel,
    SignalChannel,
    SimTime,
    WaitUntil,
    Write,
)
from .policy import (
    ArbitrationSpec,
    ChannelKind,
    CheckedConfig,
    DEFAULT_ARBITRATION,
    ExecKind,
    FunctionEvalError,
    IssueSpec,
    JoinSpec,
    StageConfig,
    apply_stage_function,
    validate_config,
)

__all__ = [
    "Transaction",
    "TraceRecord",
    "Occupancy",
    "Trace",
    "StageStats",
    "Stats",
    "RunResult",
    "run",
]


@dataclass(eq=False)
class Transaction:
    """A unit of work in flight.

    ``step`` counts completed progress along the route: a stage increments it
    exactly once per occupancy, and step == len(route) means the transaction
    has left the pipeline.  ``branch`` is the stage handling the transaction
    within the current step; fork copies share one id and merge back into a
    single transaction before their common successor (or the exit).
    """

    id: int
    orig: float
    data: float
    route: Route
    step: int = 0
    branch: StageId | None = None
    injected_at: SimTime | None = None
    exited_at: SimTime | None = None

    def advance(self) -> None:
        self.step += 1

    def copy_for(self, branch: StageId) -> "Transaction":
        return Transaction(
            id=self.id,
            orig=self.orig,
            data=self.data,
            route=self.route,
            step=self.step,
            branch=branch,
            injected_at=self.injected_at,
        )


# ---------------------------------------------------------------------------
# Results


@dataclass(frozen=True)
class TraceRecord:
    txn_id: int
    orig: float
    data: float
    injected_at: SimTime | None
    exited_at: SimTime | None
    dropped: bool


@dataclass(frozen=True)
class Occupancy:
    stage: str
    txn_id: int
    start: SimTime
    end: SimTime


@dataclass(frozen=True)
class Trace:
    records: tuple[TraceRecord, ...]
    occupancy: tuple[Occupancy, ...]

    def record_of(self, txn_id: int) -> TraceRecord:
        return self.records[txn_id]


@dataclass(frozen=True)
class StageStats:
    items: int
    busy_ns: int
    stalls: int


@dataclass(frozen=True)
class Stats:
    injected: int
    exited: int
    dropped: int
    in_flight: int
    final_time: SimTime
    timed_waits: int
    total_stalls: int
    stage: Mapping[str, StageStats]
    stalls_by_channel: Mapping[str, int]
    drops_by_channel: Mapping[str, int]
    truncated: bool

    @property
    def throughput(self) -> float | None:
        if self.final_time.ns > 0:
            return self.exited / self.final_time.ns
        return None


@dataclass(frozen=True)
class RunResult:
    trace: Trace
    stats: Stats
    warnings: tuple[str, ...]


class _Recorder:
    """Mutable collection point; frozen into Trace/Stats when the run ends."""

    def __init__(self):
        self.orig: dict[int, float] = {}
        self.data: dict[int, float] = {}
        self.injected_at: dict[int, SimTime | None] = {}
        self.exited_at: dict[int, SimTime] = {}
        self.dropped_ids: set[int] = set()
        self.occupancy: list[Occupancy] = []
        self.items: dict[str, int] = {}
        self.busy: dict[str, int] = {}
        self.stalls: dict[str, int] = {}
        self.drops: dict[str, int] = {}
        self.timed_waits = 0
        self.issue_active = True

    def new_txn(self, txn: Transaction) -> None:
        self.orig[txn.id] = txn.orig
        self.data[txn.id] = txn.data
        self.injected_at[txn.id] = None

    def mark_injected(self, txn_id: int, when: SimTime) -> None:
        self.injected_at[txn_id] = when

    def record_exit(self, txn: Transaction, when: SimTime) -> None:
        txn.exited_at = when
        self.exited_at[txn.id] = when
        self.data[txn.id] = txn.data

    def record_occupancy(self, stage: str, txn: Transaction, start: SimTime, end: SimTime, busy: int) -> None:
        self.occupancy.append(Occupancy(stage, txn.id, start, end))
        self.items[stage] = self.items.get(stage, 0) + 1
        self.busy[stage] = self.busy.get(stage, 0) + busy

    def stall(self, channel: str) -> None:
        self.stalls[channel] = self.stalls.get(channel, 0) + 1

    def drop(self, channel: str, value) -> None:
        self.drops[channel] = self.drops.get(channel, 0) + 1
        if isinstance(value, Transaction):
            self.dropped_ids.add(value.id)

    def in_flight_ids(self) -> list[int]:
        return [
            i
            for i in self.orig
            if i not in self.exited_at and i not in self.dropped_ids
        ]


# ---------------------------------------------------------------------------
# Runtime wiring


class _Runtime:
    def __init__(
        self,
        engine: Engine,
        netlist: Netlist,
        checked: CheckedConfig,
        recorder: _Recorder,
        arbitration: ArbitrationSpec,
    ):
        self.engine = engine
        self.netlist = netlist
        self.checked = checked
        self.recorder = recorder
        self.route = netlist.route
        self._edges = {(e.src, e.dst) for e in netlist.edges}
        self._severed: dict[tuple[str, str], SeveredChannel] = {}
        self._join_pending: dict[tuple[int, int], list[Transaction]] = {}
        self._next_id = 0

        self.in_channels: dict[StageId, ChannelBase] = {}
        self.out_channels: dict[StageId, ChannelBase] = {}
        for stage in netlist.stages:
            kind = checked.config_of(stage).channels
            self.in_channels[stage] = self._make_channel(f"{stage.name}.in", kind, arbitration)
            self.out_channels[stage] = self._make_channel(f"{stage.name}.out", kind, arbitration)

    def _make_channel(self, name: str, kind: ChannelKind, arbitration: ArbitrationSpec) -> ChannelBase:
        if kind is ChannelKind.SIGNAL:
            return SignalChannel(name, self.engine, on_drop=self.recorder.drop)
        return BlockingChannel(
            name, self.engine, on_stall=self.recorder.stall, arbitration=arbitration
        )

    def new_transaction(self, value: float) -> Transaction:
        txn = Transaction(
            id=self._next_id,
            orig=float(value),
            data=0.0,
            route=self.route,
        )
        self._next_id += 1
        self.recorder.new_txn(txn)
        return txn

    def channel_into(self, src_node: str, dest: StageId) -> ChannelBase:
        if (src_node, dest.name) in self._edges:
            return self.in_channels[dest]
        key = (src_node, dest.name)
        if key not in self._severed:
            self._severed[key] = SeveredChannel(
                f"{src_node}->{dest.name} (severed)", self.engine
            )
        return self._severed[key]

    def collect_join(self, txn: Transaction, completed_step: int) -> Transaction | None:
        """Gather fork copies; returns the merged transaction once all arrived."""
        expected = len(self.route.steps[completed_step])
        key = (txn.id, completed_step)
        copies = self._join_pending.setdefault(key, [])
        copies.append(txn)
        if len(copies) < expected:
            return None
        del self._join_pending[key]
        copies.sort(key=lambda t: t.branch.ordinal)
        branches = [t.branch for t in copies]
        if len(set(branches)) != len(branches):
            raise JoinError(
                f"join for transaction {txn.id} at step {completed_step} received "
                f"two copies from the same branch"
            )
        if any(t.orig != copies[0].orig for t in copies):
            raise JoinError(
                f"join for transaction {txn.id} at step {completed_step} received "
                f"copies with mismatched orig fields"
            )
        join = self.checked.join
        if join is None:
            raise JoinError(
                f"transaction {txn.id} forked at step {completed_step} but no join "
                f"specification was configured"
            )
        merged = copies[0]
        for other in copies[1:]:
            merged.data = join.merge(merged.orig, merged.data, other.data)
        return merged

    def forward(self, src_node: str, txn: Transaction, dests, via=None):
        """Deliver a transaction to the next step's stages, or retire it.

        ``via`` is a router's internal delivery queue: the write into the
        destination latch then happens in the router's output-port process so
        the router itself never blocks.  Without it (injection), the write is
        direct and blocking.
        """
        if dests is EXIT:
            self.recorder.record_exit(txn, self.engine.now)
            return
        targets = sorted(dests, key=lambda s: s.ordinal)
        if len(targets) == 1:
            txn.branch = targets[0]
            copies = [txn]
        else:
            copies = [txn.copy_for(target) for target in targets]
        for target, copy in zip(targets, copies):
            if via is None:
                yield Write(self.channel_into(src_node, target), copy)
            else:
                yield Write(via, (target, copy))

    def quiesced_message(self) -> str | None:
        in_flight = self.recorder.in_flight_ids()
        if not in_flight and not self.recorder.issue_active:
            return None
        lines = [
            f"deadlock: {len(in_flight)} transaction(s) in flight and no runnable process"
        ]
        if in_flight:
            lines.append("  in flight: " + ", ".join(str(i) for i in in_flight))
        lines.append("  processes:")
        for entry in self.engine.describe_processes():
            lines.append(f"    {entry}")
        lines.append("  channels:")
        for stage in self.netlist.stages:
            lines.append(f"    {self.in_channels[stage].describe()}")
            lines.append(f"    {self.out_channels[stage].describe()}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# Processes


def _stage_loop(rt: _Runtime, cfg: StageConfig):
    stage = cfg.stage
    in_ch = rt.in_channels[stage]
    out_ch = rt.out_channels[stage]
    reactive = cfg.exec is ExecKind.REACTIVE
    while True:
        # Peek now, consume when done: the input slot stays full for the
        # whole busy window, so contending writers suspend and stall.
        txn = yield Peek(in_ch)
        start = rt.engine.now
        try:
            txn.data = apply_stage_function(cfg.function, txn.orig, txn.data)
        except FunctionEvalError as exc:
            raise FunctionEvalError(
                f"stage {stage.name}, transaction {txn.id}: {exc}"
            ) from None
        if cfg.timing.is_untimed:
            if not reactive:
                yield Delay(0)
        else:
            rt.recorder.timed_waits += 1
            # A reactive stage must not suspend; validation restricts it to
            # zero delay, so the wait degenerates to the counted invocation.
            if not reactive:
                yield Delay(cfg.timing.delay)
        in_ch.consume()
        txn.advance()
        rt.recorder.record_occupancy(
            stage.name, txn, start, rt.engine.now, busy=cfg.timing.delay or 0
        )
        yield Write(out_ch, txn)


def _router_process(rt: _Runtime, router: RouterNode, queue: QueueChannel):
    stage = router.stage
    in_ch = rt.out_channels[stage]
    while True:
        txn = yield Read(in_ch)
        completed = txn.step - 1
        dests = router.table.lookup(completed)
        if dests is None:
            raise RoutingFault(
                f"router {router.name}: no routing entry for completed step "
                f"{completed} (transaction {txn.id})"
            )
        if len(rt.route.steps[completed]) > 1:
            merged = rt.collect_join(txn, completed)
            if merged is None:
                continue
            txn = merged
        yield from rt.forward(router.name, txn, dests, via=queue)


def _router_port_process(rt: _Runtime, router: RouterNode, queue: QueueChannel):
    # Drains the router's pending deliveries; the only process that suspends
    # on a busy stage latch.
    while True:
        target, txn = yield Read(queue)
        yield Write(rt.channel_into(router.name, target), txn)


def _issue_process(rt: _Runtime, values: Sequence[float], issue: IssueSpec):
    entry_dests = rt.netlist.entry_router.table.lookup(-1)
    state = 0
    initial = 0
    length = 0
    if issue.kind == "greedy":
        report = analysis.analyze(rt.route)
        length = report.vector.length
        for d in report.forbidden:
            initial |= 1 << d
        state = initial
    target = 0
    for index, value in enumerate(values):
        if issue.kind == "fixed":
            target = issue.interval * index
            yield WaitUntil(target)
            # Land after the nanosecond boundary: stage drains run at delta 0.
            yield Delay(0)
        elif issue.kind == "greedy":
            if index > 0:
                for d in range(1, length):
                    if not state & (1 << d):
                        break
                else:
                    d = length
                state = ((state >> d) | initial) if d < length else initial
                target += d
            yield WaitUntil(target)
            yield Delay(0)
        txn = rt.new_transaction(value)
        yield from rt.forward("entry", txn, entry_dests)
        rt.recorder.mark_injected(txn.id, rt.engine.now)
    rt.recorder.issue_active = False


# ---------------------------------------------------------------------------
# Top-level run


def _issue_warnings(route: Route, issue: IssueSpec) -> tuple[str, ...]:
    if issue.kind != "fixed":
        return ()
    report = analysis.analyze(route)
    forbidden = set(report.forbidden)
    k = issue.interval
    multiple = k
    while multiple < report.table.length:
        if multiple in forbidden:
            return (
                f"fixed issue interval {k} collides with forbidden latency "
                f"{multiple}; expect structural stalls",
            )
        multiple += k
    return ()


def run(
    netlist: Netlist,
    stage_configs: Union[CheckedConfig, Mapping[StageId, StageConfig], Sequence[StageConfig]],
    inputs: Sequence[float],
    issue: IssueSpec | None = None,
    horizon_ns: int | None = None,
    join: JoinSpec | None = None,
    arbitration: ArbitrationSpec = DEFAULT_ARBITRATION,
) -> RunResult:
    """Simulate ``inputs`` through the netlist and return trace and stats.

    Raises :class:`DeadlockError` when no process can run while transactions
    are still in flight; a reached horizon is not an error and is flagged in
    the returned stats instead.
    """
    if isinstance(stage_configs, CheckedConfig):
        checked = stage_configs
    else:
        checked = validate_config(netlist.route, stage_configs, join=join)
    if issue is None:
        issue = IssueSpec.greedy()

    engine = Engine()
    recorder = _Recorder()
    rt = _Runtime(engine, netlist, checked, recorder, arbitration)

    engine.spawn("issue", _issue_process(rt, inputs, issue))
    for stage in netlist.stages:
        engine.spawn(stage.name, _stage_loop(rt, checked.config_of(stage)))
    for router in netlist.routers[1:]:
        queue = QueueChannel(f"{router.name}.q", engine)
        engine.spawn(router.name, _router_process(rt, router, queue))
        engine.spawn(f"{router.name}.out", _router_port_process(rt, router, queue))

    truncated = engine.run(horizon_ns=horizon_ns, quiesced=rt.quiesced_message)

    records = tuple(
        TraceRecord(
            txn_id=i,
            orig=recorder.orig[i],
            data=recorder.data[i],
            injected_at=recorder.injected_at[i],
            exited_at=recorder.exited_at.get(i),
            dropped=i in recorder.dropped_ids,
        )
        for i in sorted(recorder.orig)
    )
    trace = Trace(records=records, occupancy=tuple(recorder.occupancy))

    stage_stats = {
        s.name: StageStats(
            items=recorder.items.get(s.name, 0),
            busy_ns=recorder.busy.get(s.name, 0),
            stalls=recorder.stalls.get(f"{s.name}.in", 0),
        )
        for s in netlist.stages
    }
    stats = Stats(
        injected=len(recorder.orig),
        exited=len(recorder.exited_at),
        dropped=len(recorder.dropped_ids),
        in_flight=len(recorder.in_flight_ids()),
        final_time=engine.now,
        timed_waits=recorder.timed_waits,
        total_stalls=sum(recorder.stalls.values()),
        stage=stage_stats,
        stalls_by_channel=dict(sorted(recorder.stalls.items())),
        drops_by_channel=dict(sorted(recorder.drops.items())),
        truncated=truncated,
    )
    warnings = checked.warnings + _issue_warnings(netlist.route, issue)
    return RunResult(trace=trace, stats=stats, warnings=warnings)
