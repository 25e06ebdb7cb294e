import dataclasses
import random

import pytest

import pipesim as ps
from oracles import random_expr, unit_configs
from pipesim.report import trace_to_csv


def declare_quad():
    decls = ps.declare_stages(["S1", "S2", "S3"])
    configs = [
        ps.StageConfig(decls["S1"], ps.parse_function("data + 2*sqr(orig)")),
        ps.StageConfig(decls["S2"], ps.parse_function("data + 4*orig")),
        ps.StageConfig(decls["S3"], ps.parse_function("data - 7")),
    ]
    return decls, configs


def run_route(decls, text, configs, inputs, **kw):
    route = ps.flatten(ps.parse(text, decls))
    return ps.run(ps.elaborate(route, decls), configs, inputs, **kw)


# -- functional behavior -------------------------------------------------------


def test_quadratic_pipeline_values():
    decls, configs = declare_quad()
    result = run_route(decls, "S1 >> S2 >> S3", configs, [0.0, 1.0, 2.0, 3.0])
    assert [r.data for r in result.trace.records] == [-7.0, -1.0, 9.0, 23.0]


def test_single_stage_square_function():
    decls = ps.declare_stages(["S1"])
    configs = [ps.StageConfig(decls["S1"], ps.parse_function("data + 2*sqr(orig)"))]
    result = run_route(decls, "S1", configs, [3.0])
    assert result.trace.records[0].data == 18.0


def test_eval_error_names_stage_and_transaction():
    decls = ps.declare_stages(["S1"])
    configs = [ps.StageConfig(decls["S1"], ps.parse_function("1 / data"))]
    with pytest.raises(ps.FunctionEvalError, match="stage S1, transaction 0"):
        run_route(decls, "S1", configs, [3.0])


# -- timing ---------------------------------------------------------------------


def test_complex_route_single_transaction_latency():
    decls, configs = declare_quad()
    result = run_route(
        decls, "S1 >> S2 >> S3 >> S1 >> S3*2 >> S1 >> S2", configs, [5.0]
    )
    rec = result.trace.records[0]
    assert rec.exited_at.ns - rec.injected_at.ns == 8


def test_stage_delay_defers_output_write():
    decls = ps.declare_stages(["D"])
    configs = [
        ps.StageConfig(decls["D"], ps.parse_function("data + 1"),
                       timing=ps.TimingSpec.timed(5))
    ]
    result = run_route(decls, "D", configs, [1.0])
    occ = result.trace.occupancy[0]
    assert occ.start.ns == 0 and occ.end.ns == 5
    assert result.trace.records[0].exited_at.ns == 5


def test_untimed_run_ends_at_zero_ns():
    decls, configs = declare_quad()
    untimed = [
        dataclasses.replace(c, timing=ps.UNTIMED) for c in configs
    ]
    result = run_route(
        decls, "S1 >> S2 >> S3", untimed, [0.0, 1.0, 2.0], issue=ps.IssueSpec.eager()
    )
    assert result.stats.final_time.ns == 0
    assert result.stats.final_time.delta > 0
    assert result.stats.timed_waits == 0
    assert [r.data for r in result.trace.records] == [-7.0, -1.0, 9.0]


def test_lone_transaction_latency_is_sum_of_step_maxima():
    rng = random.Random(211)
    for _ in range(25):
        decls, expr = random_expr(rng, max_stages=4, max_terms=5)
        route = ps.flatten(expr)
        delays = {s: rng.randint(0, 3) for s in route.stages}
        configs = [
            ps.StageConfig(s, ps.parse_function("data"),
                           timing=ps.TimingSpec.timed(delays[s]))
            for s in route.stages
        ]
        join = ps.JoinSpec.left() if route.fork_steps() else None
        result = ps.run(ps.elaborate(route, decls), configs, [1.0], join=join)
        rec = result.trace.records[0]
        expected = sum(max(delays[s] for s in step) for step in route.steps)
        assert rec.exited_at.ns - rec.injected_at.ns == expected


# -- fork / join -----------------------------------------------------------------


def fork_configs(decls, d2=1, d3=1):
    return [
        ps.StageConfig(decls["S1"], ps.parse_function("data + orig")),
        ps.StageConfig(decls["S2"], ps.parse_function("data + 1"),
                       timing=ps.TimingSpec.timed(d2)),
        ps.StageConfig(decls["S3"], ps.parse_function("data + 10"),
                       timing=ps.TimingSpec.timed(d3)),
        ps.StageConfig(decls["S4"], ps.parse_function("data")),
    ]


def test_fork_copies_share_id_and_merge_once():
    decls = ps.declare_stages(["S1", "S2", "S3", "S4"])
    result = run_route(
        decls, "S1 >> S2 + S3 >> S4", fork_configs(decls), [5.0, 6.0],
        join=ps.JoinSpec.sum(),
    )
    assert result.stats.injected == 2
    assert result.stats.exited == 2
    # (5+1) + (5+10) = 21 for the first input
    assert result.trace.records[0].data == 21.0


def test_terminal_fork_merges_at_exit():
    decls = ps.declare_stages(["S1", "S2", "S3", "S4"])
    result = run_route(
        decls, "S1 >> S2 + S3", fork_configs(decls), [5.0],
        join=ps.JoinSpec.sum(),
    )
    assert result.stats.exited == 1
    assert result.trace.records[0].data == 21.0
    assert any("exit" in w for w in result.warnings)


def test_join_left_right_pick_branch_by_declaration_order():
    decls = ps.declare_stages(["S1", "S2", "S3", "S4"])
    left = run_route(decls, "S1 >> S2 + S3 >> S4", fork_configs(decls), [5.0],
                     join=ps.JoinSpec.left())
    right = run_route(decls, "S1 >> S2 + S3 >> S4", fork_configs(decls), [5.0],
                      join=ps.JoinSpec.right())
    assert left.trace.records[0].data == 6.0
    assert right.trace.records[0].data == 15.0


# -- issue policies ----------------------------------------------------------------


def test_greedy_issue_on_linear_pipeline_streams_every_ns():
    decls, configs = declare_quad()
    result = run_route(decls, "S1 >> S2 >> S3", configs, [float(i) for i in range(6)])
    assert [r.injected_at.ns for r in result.trace.records] == [0, 1, 2, 3, 4, 5]
    exits = [r.exited_at.ns for r in result.trace.records]
    assert [b - a for a, b in zip(exits, exits[1:])] == [1, 1, 1, 1, 1]
    assert result.stats.total_stalls == 0


def test_greedy_issue_on_complex_route_spaces_by_mal():
    decls, configs = declare_quad()
    result = run_route(
        decls, "S1 >> S2 >> S3 >> S1 >> S3*2 >> S1 >> S2",
        configs, [float(i) for i in range(8)],
    )
    inject = [r.injected_at.ns for r in result.trace.records]
    assert [b - a for a, b in zip(inject, inject[1:])] == [4] * 7
    exits = [r.exited_at.ns for r in result.trace.records]
    assert [b - a for a, b in zip(exits, exits[1:])] == [4] * 7
    assert result.stats.total_stalls == 0


def test_greedy_issue_never_double_books_a_stage():
    decls, configs = declare_quad()
    result = run_route(
        decls, "S1 >> S2 >> S3 >> S1 >> S3*2 >> S1 >> S2",
        configs, [float(i) for i in range(8)],
    )
    seen = set()
    for occ in result.trace.occupancy:
        for t in range(occ.start.ns, occ.end.ns):
            assert (occ.stage, t) not in seen
            seen.add((occ.stage, t))


def test_eager_issue_records_structural_stalls():
    decls = ps.declare_stages(["S1", "S2"])
    configs = unit_configs(ps.flatten(ps.parse("S1 >> S2 >> S1", decls)))
    result = run_route(decls, "S1 >> S2 >> S1", configs,
                       [float(i) for i in range(6)], issue=ps.IssueSpec.eager())
    assert result.stats.stage["S1"].stalls > 0
    assert result.stats.exited == 6


def test_fixed_interval_in_forbidden_set_warns_and_stalls():
    decls = ps.declare_stages(["S1", "S2"])
    configs = unit_configs(ps.flatten(ps.parse("S1 >> S2 >> S1", decls)))
    result = run_route(decls, "S1 >> S2 >> S1", configs,
                       [float(i) for i in range(6)], issue=ps.IssueSpec.fixed(2))
    assert any("forbidden" in w for w in result.warnings)
    assert result.stats.total_stalls > 0
    assert result.stats.exited == 6


def test_fixed_interval_outside_forbidden_set_is_clean():
    decls = ps.declare_stages(["S1", "S2"])
    configs = unit_configs(ps.flatten(ps.parse("S1 >> S2 >> S1", decls)))
    result = run_route(decls, "S1 >> S2 >> S1", configs,
                       [float(i) for i in range(6)], issue=ps.IssueSpec.fixed(3))
    assert result.warnings == ()
    assert result.stats.total_stalls == 0


# -- determinism and conservation ----------------------------------------------------


def test_identical_runs_produce_identical_traces():
    decls, configs = declare_quad()
    runs = [
        run_route(decls, "S1 >> S2 >> S3 >> S1 >> S3*2 >> S1 >> S2",
                  configs, [float(i) for i in range(10)], issue=ps.IssueSpec.eager())
        for _ in range(2)
    ]
    assert runs[0].trace == runs[1].trace
    assert runs[0].stats == runs[1].stats
    assert trace_to_csv(runs[0].trace) == trace_to_csv(runs[1].trace)


def test_conservation_across_random_runs():
    rng = random.Random(307)
    for _ in range(20):
        decls, expr = random_expr(rng, max_stages=5, max_terms=6)
        route = ps.flatten(expr)
        configs = unit_configs(route)
        join = ps.JoinSpec.sum() if route.fork_steps() else None
        issue = rng.choice(
            [ps.IssueSpec.greedy(), ps.IssueSpec.eager(), ps.IssueSpec.fixed(rng.randint(1, 3))]
        )
        result = ps.run(ps.elaborate(route, decls), configs, [1.0] * 5,
                        issue=issue, join=join)
        stats = result.stats
        assert stats.injected == stats.exited + stats.in_flight + stats.dropped
        assert stats.injected == 5 and stats.exited == 5


def test_items_processed_equals_marks_times_transactions():
    decls, configs = declare_quad()
    result = run_route(
        decls, "S1 >> S2 >> S3 >> S1 >> S3*2 >> S1 >> S2",
        configs, [float(i) for i in range(5)],
    )
    assert result.stats.stage["S1"].items == 3 * 5
    assert result.stats.stage["S2"].items == 2 * 5
    assert result.stats.stage["S3"].items == 3 * 5


def test_signal_channels_drop_instead_of_blocking():
    decls = ps.declare_stages(["S1", "S2"])
    configs = [
        ps.StageConfig(decls["S1"], ps.parse_function("data + 1"), timing=ps.UNTIMED,
                       channels=ps.ChannelKind.SIGNAL, exec=ps.ExecKind.REACTIVE),
        ps.StageConfig(decls["S2"], ps.parse_function("data * 2"), timing=ps.UNTIMED,
                       channels=ps.ChannelKind.SIGNAL, exec=ps.ExecKind.REACTIVE),
    ]
    result = run_route(decls, "S1 >> S2", configs, [1.0, 2.0, 3.0, 4.0],
                       issue=ps.IssueSpec.eager())
    stats = result.stats
    assert stats.dropped > 0
    assert stats.total_stalls == 0
    assert stats.injected == stats.exited + stats.in_flight + stats.dropped
    assert sum(stats.drops_by_channel.values()) >= stats.dropped


def test_horizon_flags_partial_trace():
    decls, configs = declare_quad()
    result = run_route(decls, "S1 >> S2 >> S3", configs,
                       [float(i) for i in range(6)], horizon_ns=3)
    assert result.stats.truncated
    assert result.stats.exited < 6
    assert any(r.exited_at is None for r in result.trace.records)


# -- failure modes ---------------------------------------------------------------------


def test_missing_routing_entry_is_fatal():
    decls, configs = declare_quad()
    route = ps.flatten(ps.parse("S1 >> S2 >> S3", decls))
    netlist = ps.elaborate(route, decls)
    routers = list(netlist.routers)
    table = dict(routers[2].table.entries)
    del table[1]
    routers[2] = dataclasses.replace(routers[2], table=ps.RoutingTable(entries=table))
    broken = dataclasses.replace(netlist, routers=tuple(routers))
    with pytest.raises(ps.RoutingFault, match="r_S2"):
        ps.run(broken, configs, [1.0])


def test_severed_channel_deadlocks_with_diagnostic():
    decls, configs = declare_quad()
    route = ps.flatten(ps.parse("S1 >> S2 >> S3", decls))
    netlist = ps.elaborate(route, decls)
    severed = dataclasses.replace(
        netlist,
        edges=tuple(e for e in netlist.edges if not (e.src == "r_S1" and e.dst == "S2")),
    )
    with pytest.raises(ps.DeadlockError) as exc:
        ps.run(severed, configs, [1.0])
    message = str(exc.value)
    assert "r_S1.out: blocked writing" in message
    assert "severed" in message
    assert "in flight" in message


def test_fork_without_join_rejected_at_run():
    decls = ps.declare_stages(["S1", "S2", "S3", "S4"])
    route = ps.flatten(ps.parse("S1 >> S2 + S3 >> S4", decls))
    with pytest.raises(ps.ConfigError):
        ps.run(ps.elaborate(route, decls), fork_configs(decls), [1.0])
