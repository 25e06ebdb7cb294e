"""Pipeline expression DSL.

Stages are declared once and then combined into pipeline expressions with
three operators:

    s1 >> s2    the output of s1 feeds s2 (sequencing)
    s1 * 3      s1 is reused three consecutive times (feedback, not replication)
    s2 + s3     s2 and s3 operate on the transaction in the same cycle (fork)

The same grammar is accepted textually by :func:`parse`, so ``"S1 >> S3*2"``
and ``s1 >> s3 * 2`` build identical ASTs.  Flattening an expression yields
the *route*: the ordered list of steps (sets of stages) every transaction of
that type follows.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Iterator, Union

from .errors import PipelineError

__all__ = [
    "DeclarationError",
    "ExpressionError",
    "ParseError",
    "StageId",
    "StageSet",
    "PipeExpr",
    "StageRef",
    "Seq",
    "Repeat",
    "Fork",
    "Route",
    "declare_stages",
    "seq",
    "repeat",
    "fork",
    "parse",
    "flatten",
    "pretty",
]

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


class DeclarationError(PipelineError):
    """A stage declaration is invalid (empty set, duplicate name, bad identifier)."""


class ExpressionError(PipelineError):
    """A pipeline expression is built in a way the grammar does not allow."""


class ParseError(PipelineError):
    """Textual pipeline expression could not be parsed.

    ``position`` is the zero-based character offset into the source text.
    """

    def __init__(self, message: str, position: int | None = None):
        super().__init__(message)
        self.position = position

    def __str__(self) -> str:
        base = super().__str__()
        if self.position is None:
            return base
        return f"col {self.position + 1}: {base}"


# ---------------------------------------------------------------------------
# Stage declarations


@dataclass(frozen=True)
class StageId:
    """Identity of a declared pipeline stage.

    ``ordinal`` is the zero-based declaration index; declaration order is the
    canonical stage order everywhere in the toolkit.
    """

    name: str
    ordinal: int

    def __repr__(self) -> str:
        return f"StageId({self.name!r}, {self.ordinal})"

    # Builder operators.  Precedence follows the host language, which matches
    # the grammar: * and + bind tighter than >>.

    def __rshift__(self, other: ExprLike) -> "PipeExpr":
        return seq(self, other)

    def __mul__(self, count) -> "PipeExpr":
        return repeat(self, count)

    def __add__(self, other) -> "PipeExpr":
        return fork([self, *_fork_members(other)])


class StageSet:
    """An ordered declaration set of stages, indexable by name or position."""

    def __init__(self, stages: Iterable[StageId]):
        self._stages = tuple(stages)
        self._by_name = {s.name: s for s in self._stages}

    def __iter__(self) -> Iterator[StageId]:
        return iter(self._stages)

    def __len__(self) -> int:
        return len(self._stages)

    def __contains__(self, stage) -> bool:
        if isinstance(stage, StageId):
            return self._by_name.get(stage.name) == stage
        return stage in self._by_name

    def __getitem__(self, key: Union[str, int]) -> StageId:
        if isinstance(key, str):
            try:
                return self._by_name[key]
            except KeyError:
                raise KeyError(f"unknown stage {key!r}") from None
        return self._stages[key]

    def get(self, name: str) -> StageId | None:
        return self._by_name.get(name)

    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self._stages)

    def __repr__(self) -> str:
        return f"StageSet({list(self.names())})"


def declare_stages(names: Iterable[str]) -> StageSet:
    """Declare pipeline stages; ordinals are assigned in declaration order.

    Raises :class:`DeclarationError` on an empty list, a malformed
    identifier, or a duplicate name.
    """
    names = list(names)
    if not names:
        raise DeclarationError("at least one stage must be declared")
    seen: set[str] = set()
    stages = []
    for ordinal, name in enumerate(names):
        if not isinstance(name, str) or not _IDENT_RE.match(name):
            raise DeclarationError(f"invalid stage name {name!r}")
        if name in seen:
            raise DeclarationError(f"duplicate stage name {name!r}")
        seen.add(name)
        stages.append(StageId(name, ordinal))
    return StageSet(stages)


# ---------------------------------------------------------------------------
# Expression AST
#
# Sequencing is kept n-ary and flat: the host language folds `a >> b >> c`
# left to right while the textual grammar recurses to the right, and
# normalizing at construction makes both front ends produce the same AST.


class PipeExpr:
    """Base class of pipeline expression nodes."""

    def __rshift__(self, other: ExprLike) -> "PipeExpr":
        return seq(self, other)

    def __mul__(self, count):
        raise ExpressionError(
            "repetition with * applies to a single stage name, not to a composite expression"
        )

    def __add__(self, other):
        raise ExpressionError(
            "fork with + combines stage names only, not composite expressions"
        )

    def __str__(self) -> str:
        return pretty(self)

    def stages_used(self) -> tuple[StageId, ...]:
        """Distinct stages referenced by this expression, in ordinal order."""
        found: set[StageId] = set()
        _collect_stages(self, found)
        return tuple(sorted(found, key=lambda s: s.ordinal))


@dataclass(frozen=True)
class StageRef(PipeExpr):
    stage: StageId


@dataclass(frozen=True)
class Seq(PipeExpr):
    items: tuple[PipeExpr, ...]

    def __post_init__(self):
        if len(self.items) < 2:
            raise ExpressionError("a sequence needs at least two items")
        if any(isinstance(item, Seq) for item in self.items):
            raise ExpressionError("sequences must be flattened at construction")


@dataclass(frozen=True)
class Repeat(PipeExpr):
    stage: StageId
    count: int

    def __post_init__(self):
        if not isinstance(self.count, int) or isinstance(self.count, bool):
            raise ExpressionError("repeat count must be an integer")
        if self.count < 1:
            raise ExpressionError(f"repeat count must be >= 1, got {self.count}")


@dataclass(frozen=True)
class Fork(PipeExpr):
    stages: tuple[StageId, ...]

    def __post_init__(self):
        if len(self.stages) < 2:
            raise ExpressionError("a fork needs at least two stages")
        seen: set[StageId] = set()
        for stage in self.stages:
            if stage in seen:
                raise ExpressionError(f"duplicate stage {stage.name!r} in fork")
            seen.add(stage)

    def __add__(self, other) -> "PipeExpr":
        return fork([*self.stages, *_fork_members(other)])


ExprLike = Union[StageId, PipeExpr]


def _coerce(value: ExprLike) -> PipeExpr:
    if isinstance(value, StageId):
        return StageRef(value)
    if isinstance(value, PipeExpr):
        return value
    raise ExpressionError(
        f"expected a stage or pipeline expression, got {type(value).__name__}"
    )


def _seq_items(value: ExprLike) -> tuple[PipeExpr, ...]:
    node = _coerce(value)
    return node.items if isinstance(node, Seq) else (node,)


def _fork_members(value) -> tuple[StageId, ...]:
    if isinstance(value, StageId):
        return (value,)
    if isinstance(value, Fork):
        return value.stages
    if isinstance(value, StageRef):
        return (value.stage,)
    raise ExpressionError(
        "fork with + combines stage names only, not composite expressions"
    )


def _collect_stages(node: PipeExpr, out: set[StageId]) -> None:
    if isinstance(node, StageRef):
        out.add(node.stage)
    elif isinstance(node, Repeat):
        out.add(node.stage)
    elif isinstance(node, Fork):
        out.update(node.stages)
    elif isinstance(node, Seq):
        for item in node.items:
            _collect_stages(item, out)


# ---------------------------------------------------------------------------
# Builder API


def seq(a: ExprLike, b: ExprLike) -> PipeExpr:
    """Sequence two expressions: the output of ``a`` feeds ``b``."""
    return Seq(_seq_items(a) + _seq_items(b))


def repeat(stage: StageId, count: int) -> PipeExpr:
    """Reuse ``stage`` for ``count`` consecutive steps (feedback)."""
    if not isinstance(stage, StageId):
        raise ExpressionError(
            "repetition with * applies to a single stage name, not to a composite expression"
        )
    node = Repeat(stage, count)
    return StageRef(stage) if count == 1 else node


def fork(stages: Iterable[StageId]) -> PipeExpr:
    """Use two or more distinct stages in the same cycle."""
    members = []
    for stage in stages:
        if not isinstance(stage, StageId):
            raise ExpressionError(
                "fork with + combines stage names only, not composite expressions"
            )
        members.append(stage)
    return Fork(tuple(members))


# ---------------------------------------------------------------------------
# Routes


@dataclass(frozen=True)
class Route:
    """The ordered steps a transaction visits; each step is a set of stages."""

    steps: tuple[frozenset[StageId], ...]

    def __post_init__(self):
        if not self.steps:
            raise ExpressionError("a route must have at least one step")
        if any(not step for step in self.steps):
            raise ExpressionError("route steps must be non-empty")

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def stages(self) -> tuple[StageId, ...]:
        """Distinct stages used by the route, in ordinal order."""
        found: set[StageId] = set()
        for step in self.steps:
            found.update(step)
        return tuple(sorted(found, key=lambda s: s.ordinal))

    def fork_steps(self) -> tuple[int, ...]:
        return tuple(i for i, step in enumerate(self.steps) if len(step) > 1)

    def describe(self) -> str:
        parts = []
        for step in self.steps:
            names = sorted(s.name for s in step)
            parts.append(names[0] if len(names) == 1 else "{" + "+".join(names) + "}")
        return " ".join(parts)


def flatten(expr: ExprLike) -> Route:
    """Flatten an expression into its route, desugaring repetitions first."""
    steps: list[frozenset[StageId]] = []
    _emit_steps(_coerce(expr), steps)
    return Route(tuple(steps))


def _emit_steps(node: PipeExpr, steps: list[frozenset[StageId]]) -> None:
    if isinstance(node, StageRef):
        steps.append(frozenset((node.stage,)))
    elif isinstance(node, Repeat):
        steps.extend(frozenset((node.stage,)) for _ in range(node.count))
    elif isinstance(node, Fork):
        steps.append(frozenset(node.stages))
    elif isinstance(node, Seq):
        for item in node.items:
            _emit_steps(item, steps)
    else:  # pragma: no cover - guarded by _coerce
        raise ExpressionError(f"unknown expression node {node!r}")


def pretty(expr: ExprLike) -> str:
    """Render an expression in the textual grammar; parses back to the same AST."""
    node = _coerce(expr)
    if isinstance(node, Seq):
        return " >> ".join(_pretty_term(item) for item in node.items)
    return _pretty_term(node)


def _pretty_term(node: PipeExpr) -> str:
    if isinstance(node, StageRef):
        return node.stage.name
    if isinstance(node, Repeat):
        return f"{node.stage.name}*{node.count}"
    if isinstance(node, Fork):
        return " + ".join(s.name for s in node.stages)
    raise ExpressionError("sequences cannot nest inside a term")


# ---------------------------------------------------------------------------
# Textual front end
#
#   Pipe  ::= Term '>>' Pipe | Term
#   Term  ::= Stage | Stage '*' int | Stage '+' Stage (chained for n-way forks)
#   Stage ::= identifier
#
# Parentheses are deliberately rejected: grouping has no defined meaning in
# this grammar.

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<shift>>>)
  | (?P<star>\*)
  | (?P<plus>\+)
  | (?P<int>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<paren>[()])
  | (?P<other>.)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    position: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    for match in _TOKEN_RE.finditer(text):
        kind = match.lastgroup
        if kind == "ws":
            continue
        if kind == "paren":
            raise ParseError(
                "parentheses are not supported in pipeline expressions",
                match.start(),
            )
        if kind == "other":
            raise ParseError(f"unexpected character {match.group()!r}", match.start())
        tokens.append(_Token(kind, match.group(), match.start()))
    tokens.append(_Token("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token], decls: StageSet):
        self.tokens = tokens
        self.decls = decls
        self.index = 0

    def peek(self) -> _Token:
        return self.tokens[self.index]

    def advance(self) -> _Token:
        token = self.tokens[self.index]
        self.index += 1
        return token

    def expect(self, kind: str, what: str) -> _Token:
        token = self.peek()
        if token.kind != kind:
            got = repr(token.text) if token.kind != "end" else "end of input"
            raise ParseError(f"expected {what}, got {got}", token.position)
        return self.advance()

    def parse_pipe(self) -> PipeExpr:
        terms = [self.parse_term()]
        while self.peek().kind == "shift":
            self.advance()
            terms.append(self.parse_term())
        if len(terms) == 1:
            return terms[0]
        expr = terms[0]
        for term in terms[1:]:
            expr = seq(expr, term)
        return expr

    def parse_term(self) -> PipeExpr:
        stage = self.parse_stage()
        token = self.peek()
        if token.kind == "star":
            self.advance()
            count_token = self.expect("int", "a repeat count")
            count = int(count_token.text)
            if count < 1:
                raise ParseError(
                    f"repeat count must be >= 1, got {count}", count_token.position
                )
            return repeat(stage, count)
        if token.kind == "plus":
            members = [stage]
            while self.peek().kind == "plus":
                self.advance()
                members.append(self.parse_stage())
            try:
                return fork(members)
            except ExpressionError as exc:
                raise ParseError(str(exc), token.position) from None
        return StageRef(stage)

    def parse_stage(self) -> StageId:
        token = self.expect("ident", "a stage name")
        stage = self.decls.get(token.text)
        if stage is None:
            raise ParseError(f"unknown stage {token.text!r}", token.position)
        return stage


def parse(text: str, decls: StageSet) -> PipeExpr:
    """Parse a textual pipeline expression against a declaration set.

    The resulting AST is identical to the one the builder operators produce
    for the same expression.
    """
    parser = _Parser(_tokenize(text), decls)
    expr = parser.parse_pipe()
    trailing = parser.peek()
    if trailing.kind != "end":
        raise ParseError(f"unexpected token {trailing.text!r}", trailing.position)
    return expr
