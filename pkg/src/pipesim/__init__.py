"""pipesim: pipeline modeling, scheduling analysis, and simulation.

Declare stages, combine them with ``>>`` (sequence), ``*`` (feedback reuse)
and ``+`` (fork), then analyze the resulting route's issue behavior or run
transactions through a deterministic discrete-event model of it::

    from pipesim import declare_stages, flatten, analyze, elaborate, run
    from pipesim import StageConfig, TimingSpec, parse_function

    s1, s2, s3 = declare_stages(["S1", "S2", "S3"])
    route = flatten(s1 >> s2 >> s3)
    print(analyze(route).mal)

    configs = [
        StageConfig(s1, parse_function("data + 2*sqr(orig)")),
        StageConfig(s2, parse_function("data + 4*orig")),
        StageConfig(s3, parse_function("data - 7")),
    ]
    result = run(elaborate(route), configs, inputs=[0, 1, 2, 3])
    print([rec.data for rec in result.trace.records])
"""

from .analysis import (
    AnalysisError,
    AnalysisReport,
    CollisionVector,
    IssueCycle,
    ReservationTable,
    analyze,
    collision_vector,
    forbidden_latencies,
    greedy_cycle,
    minimal_average_latency,
    reservation_table,
)
from .dsl import (
    DeclarationError,
    ExpressionError,
    Fork,
    ParseError,
    PipeExpr,
    Repeat,
    Route,
    Seq,
    StageId,
    StageRef,
    StageSet,
    declare_stages,
    flatten,
    fork,
    parse,
    pretty,
    repeat,
    seq,
)
from .elaborate import (
    EXIT,
    ChannelEdge,
    ElaborationError,
    Netlist,
    RouterNode,
    RoutingTable,
    elaborate,
    routing_table,
    to_dot,
)
from .engine import (
    DeadlockError,
    Engine,
    JoinError,
    RoutingFault,
    SimTime,
)
from .errors import PipelineError
from .fileformat import (
    PipelineFileError,
    PipelineSetup,
    load_pipeline_file,
    parse_pipeline_text,
)
from .policy import (
    UNTIMED,
    ArbitrationSpec,
    ChannelKind,
    CheckedConfig,
    ConfigError,
    ExecKind,
    FunctionEvalError,
    FunctionParseError,
    FunctionSpec,
    IssueSpec,
    JoinSpec,
    StageConfig,
    TimingSpec,
    eval_function,
    parse_function,
    validate_config,
)
from .simulate import (
    Occupancy,
    RunResult,
    StageStats,
    Stats,
    Trace,
    TraceRecord,
    Transaction,
    run,
)

__version__ = "0.1.0"
