"""Pipeline definition files.

A file declares stages, at least one pipeline expression, and optional join
and issue policies::

    # three stage example
    stage S1 { fn = "data + 2*sqr(orig)"; delay = 1; }
    stage S2 { fn = "data + 4*orig";      delay = 1; }
    stage S3 { fn = "data - 7";           delay = 1; }
    pipeline = S1 >> S2 >> S3;

Stage blocks accept optional ``channel = blocking|signal;`` and
``exec = loop|reactive;`` settings, and ``delay = untimed;`` selects the
untimed model.  Multi-function pipelines repeat ``pipeline <name> = ...;``
with distinct names.  ``join = left|right|sum|"<expr>";`` configures fork
merging and ``issue = greedy|eager|fixed:<k>;`` the default issue policy.
Comments run from ``#`` to end of line.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from . import dsl
from .dsl import PipeExpr, Route, StageId, StageSet
from .errors import PipelineError
from .policy import (
    ChannelKind,
    ExecKind,
    FunctionParseError,
    IssueSpec,
    JoinSpec,
    StageConfig,
    TimingSpec,
    UNTIMED,
    parse_function,
)

__all__ = ["PipelineFileError", "PipelineSetup", "parse_pipeline_text", "load_pipeline_file"]


class PipelineFileError(PipelineError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(message)
        self.line = line
        self.column = column

    def __str__(self) -> str:
        return f"line {self.line}, col {self.column}: {super().__str__()}"


@dataclass(frozen=True)
class PipelineSetup:
    """Everything a command needs, resolved from one definition file."""

    decls: StageSet
    configs: dict[StageId, StageConfig]
    pipelines: dict[str, PipeExpr]
    routes: dict[str, Route]
    join: JoinSpec | None
    issue: IssueSpec | None


_FILE_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<shift>>>)
  | (?P<int>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[{}=;:*+()])
  | (?P<other>.)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    offset: int


class _LineIndex:
    def __init__(self, text: str):
        self.starts = [0]
        for i, ch in enumerate(text):
            if ch == "\n":
                self.starts.append(i + 1)

    def locate(self, offset: int) -> tuple[int, int]:
        line = 0
        for i, start in enumerate(self.starts):
            if start <= offset:
                line = i
            else:
                break
        return line + 1, offset - self.starts[line] + 1


def _strip_comments(text: str) -> str:
    # Replace comments with spaces so token offsets keep pointing into the
    # original source.
    out = []
    in_comment = False
    in_string = False
    for ch in text:
        if in_comment:
            if ch == "\n":
                in_comment = False
                out.append(ch)
            else:
                out.append(" ")
        elif in_string:
            out.append(ch)
            if ch == '"':
                in_string = False
        elif ch == "#":
            in_comment = True
            out.append(" ")
        elif ch == '"':
            in_string = True
            out.append(ch)
        else:
            out.append(ch)
    return "".join(out)


class _FileParser:
    def __init__(self, text: str):
        self.text = text
        self.lines = _LineIndex(text)
        self.stripped = _strip_comments(text)
        self.tokens: list[_Token] = []
        for match in _FILE_TOKEN.finditer(self.stripped):
            kind = match.lastgroup
            if kind == "ws":
                continue
            if kind == "other":
                self._fail(f"unexpected character {match.group()!r}", match.start())
            self.tokens.append(_Token(kind, match.group(), match.start()))
        self.tokens.append(_Token("end", "", len(text)))
        self.index = 0

    def _fail(self, message: str, offset: int):
        line, column = self.lines.locate(offset)
        raise PipelineFileError(message, line, column)

    def peek(self) -> _Token:
        return self.tokens[self.index]

    def advance(self) -> _Token:
        token = self.tokens[self.index]
        self.index += 1
        return token

    def expect(self, kind: str, text: str | None = None, what: str | None = None) -> _Token:
        token = self.peek()
        if token.kind != kind or (text is not None and token.text != text):
            wanted = what or (text if text is not None else kind)
            got = repr(token.text) if token.kind != "end" else "end of file"
            self._fail(f"expected {wanted}, got {got}", token.offset)
        return self.advance()

    # -- grammar --------------------------------------------------------

    def parse_file(self):
        stage_blocks = []
        pipelines = []
        join_token = None
        issue_token = None
        while self.peek().kind != "end":
            token = self.peek()
            if token.kind != "ident":
                self._fail(
                    f"expected 'stage', 'pipeline', 'join' or 'issue', got {token.text!r}",
                    token.offset,
                )
            if token.text == "stage":
                stage_blocks.append(self.parse_stage_block())
            elif token.text == "pipeline":
                pipelines.append(self.parse_pipeline_def())
            elif token.text == "join":
                if join_token is not None:
                    self._fail("duplicate join setting", token.offset)
                join_token = self.parse_join_def()
            elif token.text == "issue":
                if issue_token is not None:
                    self._fail("duplicate issue setting", token.offset)
                issue_token = self.parse_issue_def()
            else:
                self._fail(
                    f"expected 'stage', 'pipeline', 'join' or 'issue', got {token.text!r}",
                    token.offset,
                )
        return stage_blocks, pipelines, join_token, issue_token

    def parse_stage_block(self):
        self.expect("ident", "stage")
        name_token = self.expect("ident", what="a stage name")
        self.expect("punct", "{")
        settings: dict[str, tuple[_Token, _Token]] = {}
        while not (self.peek().kind == "punct" and self.peek().text == "}"):
            key = self.expect("ident", what="a setting name (fn, delay, channel, exec)")
            if key.text not in ("fn", "delay", "channel", "exec"):
                self._fail(f"unknown stage setting {key.text!r}", key.offset)
            if key.text in settings:
                self._fail(f"duplicate setting {key.text!r}", key.offset)
            self.expect("punct", "=")
            value = self.advance()
            if value.kind == "end":
                self._fail("unterminated stage block", value.offset)
            self.expect("punct", ";")
            settings[key.text] = (key, value)
        self.expect("punct", "}")
        return name_token, settings

    def parse_pipeline_def(self):
        keyword = self.expect("ident", "pipeline")
        name_token = None
        if self.peek().kind == "ident":
            name_token = self.advance()
        self.expect("punct", "=")
        start = self.peek()
        if start.kind == "end":
            self._fail("missing pipeline expression", start.offset)
        expr_start = start.offset
        end_offset = expr_start
        while not (self.peek().kind == "punct" and self.peek().text == ";"):
            token = self.advance()
            if token.kind == "end":
                self._fail("missing ';' after pipeline expression", token.offset)
            end_offset = token.offset + len(token.text)
        self.expect("punct", ";")
        return keyword, name_token, expr_start, self.stripped[expr_start:end_offset]

    def parse_join_def(self):
        self.expect("ident", "join")
        self.expect("punct", "=")
        value = self.advance()
        if value.kind not in ("ident", "string"):
            self._fail("expected left, right, sum or a quoted expression", value.offset)
        self.expect("punct", ";")
        return value

    def parse_issue_def(self):
        self.expect("ident", "issue")
        self.expect("punct", "=")
        value = self.advance()
        if value.kind != "ident" or value.text not in ("greedy", "eager", "fixed"):
            self._fail("expected greedy, eager or fixed:<interval>", value.offset)
        interval = None
        if value.text == "fixed":
            self.expect("punct", ":")
            interval = self.expect("int", what="an issue interval")
        self.expect("punct", ";")
        return value, interval


def _unquote(raw: str) -> str:
    body = raw[1:-1]
    return body.replace('\\"', '"').replace("\\\\", "\\")


def parse_pipeline_text(text: str) -> PipelineSetup:
    """Parse and resolve a pipeline definition from source text."""
    parser = _FileParser(text)
    stage_blocks, pipeline_defs, join_token, issue_token = parser.parse_file()

    if not stage_blocks:
        raise PipelineFileError("no stage declarations", 1, 1)
    if not pipeline_defs:
        raise PipelineFileError("no pipeline expression", 1, 1)

    names = []
    for name_token, _ in stage_blocks:
        if name_token.text in names:
            parser._fail(f"duplicate stage {name_token.text!r}", name_token.offset)
        names.append(name_token.text)
    decls = dsl.declare_stages(names)

    configs: dict[StageId, StageConfig] = {}
    for name_token, settings in stage_blocks:
        stage = decls[name_token.text]
        if "fn" not in settings:
            parser._fail(f"stage {stage.name!r} is missing fn", name_token.offset)
        if "delay" not in settings:
            parser._fail(f"stage {stage.name!r} is missing delay", name_token.offset)

        key, value = settings["fn"]
        if value.kind != "string":
            parser._fail("fn must be a quoted expression", value.offset)
        try:
            function = parse_function(_unquote(value.text))
        except FunctionParseError as exc:
            parser._fail(f"in fn of stage {stage.name!r}: {exc}", value.offset)

        key, value = settings["delay"]
        if value.kind == "int":
            timing = TimingSpec.timed(int(value.text))
        elif value.kind == "ident" and value.text == "untimed":
            timing = UNTIMED
        else:
            parser._fail("delay must be an integer or 'untimed'", value.offset)

        channels = ChannelKind.BLOCKING
        if "channel" in settings:
            key, value = settings["channel"]
            if value.kind != "ident" or value.text not in ("blocking", "signal"):
                parser._fail("channel must be 'blocking' or 'signal'", value.offset)
            channels = ChannelKind(value.text)

        exec_kind = ExecKind.LOOP
        if "exec" in settings:
            key, value = settings["exec"]
            if value.kind != "ident" or value.text not in ("loop", "reactive"):
                parser._fail("exec must be 'loop' or 'reactive'", value.offset)
            exec_kind = ExecKind(value.text)

        configs[stage] = StageConfig(
            stage=stage,
            function=function,
            timing=timing,
            channels=channels,
            exec=exec_kind,
        )

    pipelines: dict[str, PipeExpr] = {}
    routes: dict[str, Route] = {}
    for keyword, name_token, expr_offset, expr_text in pipeline_defs:
        name = name_token.text if name_token is not None else "main"
        if name in pipelines:
            where = name_token or keyword
            parser._fail(f"duplicate pipeline {name!r}", where.offset)
        try:
            expr = dsl.parse(expr_text, decls)
        except dsl.ParseError as exc:
            offset = expr_offset + (exc.position or 0)
            line, column = parser.lines.locate(offset)
            raise PipelineFileError(str(exc.args[0]), line, column) from None
        pipelines[name] = expr
        routes[name] = dsl.flatten(expr)

    join = None
    if join_token is not None:
        if join_token.kind == "string":
            try:
                join = JoinSpec.custom(_unquote(join_token.text))
            except FunctionParseError as exc:
                parser._fail(f"in join expression: {exc}", join_token.offset)
        elif join_token.text in ("left", "right", "sum"):
            join = JoinSpec(kind=join_token.text)
        else:
            parser._fail(
                "join must be left, right, sum or a quoted expression",
                join_token.offset,
            )

    issue = None
    if issue_token is not None:
        value, interval = issue_token
        if value.text == "fixed":
            issue = IssueSpec.fixed(int(interval.text))
        else:
            issue = IssueSpec(kind=value.text)

    return PipelineSetup(
        decls=decls,
        configs=configs,
        pipelines=pipelines,
        routes=routes,
        join=join,
        issue=issue,
    )


def load_pipeline_file(path: str | Path) -> PipelineSetup:
    return parse_pipeline_text(Path(path).read_text(encoding="utf-8"))
