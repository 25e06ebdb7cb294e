"""Configuration dimensions of a pipeline stage.

A stage's behavior is assembled from orthogonal specs: the function it
computes, its timing model, the channel kind on its ports, its execution
style, plus pipeline-level join, issue, and arbitration policies.  All specs
are plain immutable data so a complete run configuration can be serialized,
compared, and swapped one dimension at a time.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence, Union

from .dsl import Route, StageId
from .errors import PipelineError

__all__ = [
    "FunctionParseError",
    "FunctionEvalError",
    "ConfigError",
    "FunctionSpec",
    "parse_function",
    "eval_function",
    "TimingSpec",
    "ChannelKind",
    "ExecKind",
    "JoinSpec",
    "StageConfig",
    "IssueSpec",
    "ArbitrationSpec",
    "CheckedConfig",
    "validate_config",
]


class FunctionParseError(PipelineError):
    def __init__(self, message: str, position: int | None = None):
        super().__init__(message)
        self.position = position

    def __str__(self) -> str:
        base = super().__str__()
        if self.position is None:
            return base
        return f"col {self.position + 1}: {base}"


class FunctionEvalError(PipelineError):
    """Raised when evaluating a stage function fails (division by zero)."""


class ConfigError(PipelineError):
    """A run configuration is incomplete or inconsistent."""


# ---------------------------------------------------------------------------
# Function expressions
#
# Tiny arithmetic language over named real variables:
#   expr   := term (('+'|'-') term)*
#   term   := factor (('*'|'/') factor)*
#   factor := NUMBER | VAR | '-' factor | 'sqr' '(' expr ')' | '(' expr ')'

_FN_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[()+\-*/]))"
)


@dataclass(frozen=True)
class _Num:
    value: float


@dataclass(frozen=True)
class _Var:
    name: str


@dataclass(frozen=True)
class _Unary:
    op: str  # 'neg' or 'sqr'
    operand: object


@dataclass(frozen=True)
class _Bin:
    op: str  # one of + - * /
    left: object
    right: object


class _FnParser:
    def __init__(self, source: str, variables: Sequence[str]):
        self.source = source
        self.variables = set(variables)
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(source):
            match = _FN_TOKEN.match(source, pos)
            if match is None:
                if source[pos:].strip() == "":
                    break
                bad = pos + len(source[pos:]) - len(source[pos:].lstrip())
                raise FunctionParseError(
                    f"unexpected character {source[bad]!r}", bad
                )
            kind = match.lastgroup
            self.tokens.append((kind, match.group(kind), match.start(kind)))
            pos = match.end()
        self.tokens.append(("end", "", len(source)))
        self.index = 0

    def peek(self):
        return self.tokens[self.index]

    def advance(self):
        token = self.tokens[self.index]
        self.index += 1
        return token

    def parse(self):
        node = self.parse_expr()
        kind, text, position = self.peek()
        if kind != "end":
            raise FunctionParseError(f"unexpected token {text!r}", position)
        return node

    def parse_expr(self):
        node = self.parse_term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.advance()[1]
            node = _Bin(op, node, self.parse_term())
        return node

    def parse_term(self):
        node = self.parse_factor()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.advance()[1]
            node = _Bin(op, node, self.parse_factor())
        return node

    def parse_factor(self):
        kind, text, position = self.advance()
        if kind == "num":
            return _Num(float(text))
        if kind == "ident":
            if text == "sqr":
                self.expect_op("(")
                inner = self.parse_expr()
                self.expect_op(")")
                return _Unary("sqr", inner)
            if text in self.variables:
                return _Var(text)
            raise FunctionParseError(f"unknown variable {text!r}", position)
        if kind == "op" and text == "-":
            return _Unary("neg", self.parse_factor())
        if kind == "op" and text == "(":
            inner = self.parse_expr()
            self.expect_op(")")
            return inner
        got = repr(text) if kind != "end" else "end of input"
        raise FunctionParseError(f"expected a value, got {got}", position)

    def expect_op(self, op: str):
        kind, text, position = self.advance()
        if kind != "op" or text != op:
            got = repr(text) if kind != "end" else "end of input"
            raise FunctionParseError(f"expected {op!r}, got {got}", position)


def _eval_node(node, env: Mapping[str, float]) -> float:
    if isinstance(node, _Num):
        return node.value
    if isinstance(node, _Var):
        return env[node.name]
    if isinstance(node, _Unary):
        value = _eval_node(node.operand, env)
        return value * value if node.op == "sqr" else -value
    left = _eval_node(node.left, env)
    right = _eval_node(node.right, env)
    if node.op == "+":
        return left + right
    if node.op == "-":
        return left - right
    if node.op == "*":
        return left * right
    if right == 0:
        raise FunctionEvalError("division by zero")
    return left / right


@dataclass(frozen=True)
class FunctionSpec:
    """A parsed arithmetic expression over named real variables."""

    source: str
    variables: tuple[str, ...]
    root: object

    def evaluate(self, env: Mapping[str, float]) -> float:
        return _eval_node(self.root, env)

    def __str__(self) -> str:
        return self.source


def parse_function(source: str, variables: Sequence[str] = ("orig", "data")) -> FunctionSpec:
    """Parse a function expression; the default variable set is a stage's."""
    root = _FnParser(source, variables).parse()
    return FunctionSpec(source=source, variables=tuple(variables), root=root)


def eval_function(spec: FunctionSpec, orig: float, data: float) -> float:
    """Apply a stage function to a transaction's payload fields."""
    return spec.evaluate({"orig": orig, "data": data})


StageFunction = Union[FunctionSpec, Callable[[float, float], float]]


def apply_stage_function(fn: StageFunction, orig: float, data: float) -> float:
    if isinstance(fn, FunctionSpec):
        return eval_function(fn, orig, data)
    return fn(orig, data)


# ---------------------------------------------------------------------------
# Timing


@dataclass(frozen=True)
class TimingSpec:
    """Timed(delay in ns) or untimed (delta ordering only, zero ns)."""

    delay: int | None  # None means untimed

    @staticmethod
    def timed(delay: int) -> "TimingSpec":
        if delay < 0:
            raise ConfigError(f"stage delay must be >= 0, got {delay}")
        return TimingSpec(delay=delay)

    @property
    def is_untimed(self) -> bool:
        return self.delay is None

    def __str__(self) -> str:
        return "untimed" if self.is_untimed else f"timed({self.delay})"


UNTIMED = TimingSpec(delay=None)


# ---------------------------------------------------------------------------
# Communication / execution


class ChannelKind(enum.Enum):
    """Single-slot blocking FIFO, or overwrite-on-write signal."""

    BLOCKING = "blocking"
    SIGNAL = "signal"


class ExecKind(enum.Enum):
    """Suspendable perpetual loop, or a per-arrival callback that never suspends."""

    LOOP = "loop"
    REACTIVE = "reactive"


# ---------------------------------------------------------------------------
# Join


_JOIN_VARIABLES = ("orig", "dataL", "dataR")


@dataclass(frozen=True)
class JoinSpec:
    """How branch copies of a forked transaction merge back into one.

    Branch order is the stage declaration order: the copy that went through
    the lower-ordinal stage is the left operand.  N-way forks merge by
    folding left to right.
    """

    kind: str  # left | right | sum | custom
    expr: FunctionSpec | None = None

    @staticmethod
    def left() -> "JoinSpec":
        return JoinSpec(kind="left")

    @staticmethod
    def right() -> "JoinSpec":
        return JoinSpec(kind="right")

    @staticmethod
    def sum() -> "JoinSpec":
        return JoinSpec(kind="sum")

    @staticmethod
    def custom(expression: str | FunctionSpec) -> "JoinSpec":
        if isinstance(expression, str):
            expression = parse_function(expression, _JOIN_VARIABLES)
        return JoinSpec(kind="custom", expr=expression)

    def merge(self, orig: float, data_left: float, data_right: float) -> float:
        if self.kind == "left":
            return data_left
        if self.kind == "right":
            return data_right
        if self.kind == "sum":
            return data_left + data_right
        assert self.expr is not None
        return self.expr.evaluate(
            {"orig": orig, "dataL": data_left, "dataR": data_right}
        )

    def __str__(self) -> str:
        return self.expr.source if self.kind == "custom" else self.kind


# ---------------------------------------------------------------------------
# Stage configuration


@dataclass(frozen=True)
class StageConfig:
    """Complete behavioral configuration of one stage."""

    stage: StageId
    function: StageFunction
    timing: TimingSpec = TimingSpec(delay=1)
    channels: ChannelKind = ChannelKind.BLOCKING
    exec: ExecKind = ExecKind.LOOP


# ---------------------------------------------------------------------------
# Issue / arbitration


@dataclass(frozen=True)
class IssueSpec:
    """When new transactions enter the pipeline.

    greedy   issue as soon as the collision vector permits
    fixed    issue every ``interval`` ns
    eager    issue whenever the entry channel accepts a transaction
    """

    kind: str
    interval: int | None = None

    @staticmethod
    def greedy() -> "IssueSpec":
        return IssueSpec(kind="greedy")

    @staticmethod
    def fixed(interval: int) -> "IssueSpec":
        if interval < 1:
            raise ConfigError(f"fixed issue interval must be >= 1, got {interval}")
        return IssueSpec(kind="fixed", interval=interval)

    @staticmethod
    def eager() -> "IssueSpec":
        return IssueSpec(kind="eager")

    def __str__(self) -> str:
        return f"fixed:{self.interval}" if self.kind == "fixed" else self.kind


@dataclass(frozen=True)
class ArbitrationSpec:
    """Order in which writers blocked on one channel are granted the slot.

    The default grants by arrival: earlier nanosecond first, ties within a
    nanosecond broken by transaction id, then by suspension order.  A custom
    key over (blocked_ns, transaction id, suspension sequence) can replace it.
    """

    key: Callable[[tuple[int, int, int]], object] | None = None

    def sort_key(self, blocked_ns: int, txn_id: int, seq: int):
        if self.key is None:
            return (blocked_ns, txn_id, seq)
        return self.key((blocked_ns, txn_id, seq))


DEFAULT_ARBITRATION = ArbitrationSpec()


# ---------------------------------------------------------------------------
# Whole-run validation


@dataclass(frozen=True)
class CheckedConfig:
    """A validated run configuration: every route stage covered, joins present."""

    route: Route
    configs: Mapping[StageId, StageConfig]
    join: JoinSpec | None
    warnings: tuple[str, ...]

    def config_of(self, stage: StageId) -> StageConfig:
        return self.configs[stage]


def validate_config(
    route: Route,
    configs: Union[Mapping[StageId, StageConfig], Sequence[StageConfig]],
    join: JoinSpec | None = None,
) -> CheckedConfig:
    """Check a set of stage configs against a route.

    Raises :class:`ConfigError` for a missing or duplicate stage config, a
    reactive stage with blocking channels or a positive delay, or a fork
    without a join spec.  Returns the checked configuration together with
    non-fatal warnings.
    """
    if not isinstance(configs, Mapping):
        table: dict[StageId, StageConfig] = {}
        for cfg in configs:
            if cfg.stage in table:
                raise ConfigError(f"duplicate configuration for stage {cfg.stage.name!r}")
            table[cfg.stage] = cfg
    else:
        table = dict(configs)

    missing = [s.name for s in route.stages if s not in table]
    if missing:
        raise ConfigError(f"missing configuration for stage(s): {', '.join(missing)}")

    for stage in route.stages:
        cfg = table[stage]
        if cfg.stage != stage:
            raise ConfigError(
                f"configuration keyed by {stage.name!r} describes {cfg.stage.name!r}"
            )
        if cfg.exec is ExecKind.REACTIVE:
            if cfg.channels is not ChannelKind.SIGNAL:
                raise ConfigError(
                    f"stage {stage.name!r}: reactive execution requires signal channels"
                )
            if not cfg.timing.is_untimed and cfg.timing.delay > 0:
                raise ConfigError(
                    f"stage {stage.name!r}: reactive execution cannot delay "
                    f"(got {cfg.timing})"
                )

    warnings: list[str] = []
    fork_steps = route.fork_steps()
    if fork_steps and join is None:
        first = fork_steps[0]
        if first + 1 < len(route.steps):
            successors = ", ".join(sorted(s.name for s in route.steps[first + 1]))
            where = f"the router feeding {successors}"
        else:
            where = "the pipeline exit"
        raise ConfigError(
            f"fork at step {first} merges at {where}: a join specification is required"
        )
    if fork_steps and fork_steps[-1] == len(route.steps) - 1:
        warnings.append(
            "final step is a fork; branch outputs merge at the pipeline exit"
        )

    return CheckedConfig(
        route=route,
        configs={s: table[s] for s in route.stages},
        join=join,
        warnings=tuple(warnings),
    )
