import random

import pytest

from tcpa.binary import parse_module
from tcpa.graph import CONTROL_FLOW, DATA_FLOW, Dependency, condition_vertex, dependencies_of, local_vertex
from tcpa.interp import Trapped, TrapReason, run_concrete
from tcpa.models import CheckBudget, ExploreBounds
from tcpa.properties import PropertySet
from tcpa.report import Outcome
from tcpa.solver import PathCondition, check_sat
from tcpa.symexec import (
    IncompleteSourceMap,
    UnknownTarget,
    explore,
    init_analysis,
    initial_configuration,
    step,
)
from tcpa.text import AssemblySyntaxError, SourceMap, assemble
from tcpa.wasm import I32, Export, Function, FunctionType, Instruction, Module, ValidationFailure

from tests.helpers import DEFAULT_PROPS_TEXT, analysis_of, corpus_source, random_program

WIDE = ExploreBounds(max_paths=4096, per_path_solver_budget=CheckBudget(max_millis=30_000, max_enumeration=1 << 16))

VALID = Outcome.VALID
VIOLATED = Outcome.VIOLATED
UNKNOWN = Outcome.UNKNOWN


@pytest.mark.parametrize("name,assertions,traps", [
    ("add.wat", VALID, VALID),
    ("clamp.wat", VALID, VALID),
    ("safe_div.wat", VALID, VALID),
    ("sum_loop.wat", VALID, VALID),
    ("bounded_loop.wat", VALID, VALID),
    ("table_lookup.wat", VALID, VALID),
    ("dispatch.wat", VALID, VALID),
    ("select_max.wat", VALID, VALID),
    ("calls.wat", VALID, VALID),
    ("mix.wat", VALID, VALID),
    ("div.wat", VALID, VIOLATED),
    ("indirect.wat", VALID, VIOLATED),
    ("checked_index.wat", VIOLATED, VIOLATED),
    ("oob.wat", UNKNOWN, VIOLATED),
])
def test_corpus_verdicts(name, assertions, traps):
    report = explore(analysis_of(corpus_source(name)))
    assert report.outcome("no-assert-failure").outcome == assertions
    assert report.outcome("never-traps").outcome == traps
    assert not report.eo


def test_violations_replay_concretely(corpus):
    for path in sorted(corpus.glob("*.wat")):
        module, _, _ = assemble(corpus_source(path.name))
        report = explore(analysis_of(corpus_source(path.name)))
        for p in report.property_outcomes:
            if p.outcome != VIOLATED:
                continue
            w = p.witness
            result = run_concrete(module, w.function, w.args)
            assert isinstance(result, Trapped), (path.name, p.id)
            assert (result.reason, result.byte_offset) == (w.trap, w.byte_offset)


def test_checked_index_witness_points_at_the_assert():
    report = explore(analysis_of(corpus_source("checked_index.wat")))
    w = report.outcome("no-assert-failure").witness
    assert w.function == "index"
    assert w.trap == TrapReason.ASSERT_FAILED
    assert str(w.location) == "11:5"
    assert [name for name, _ in w.model] == ["arg0"]
    assert w.args[0] & 15 >= 10


def test_division_witness_names_the_trap():
    report = explore(analysis_of(corpus_source("div.wat")))
    w = report.outcome("never-traps").witness
    assert w.trap in (TrapReason.DIV_BY_ZERO, TrapReason.INTEGER_OVERFLOW)
    assert len(w.args) == 2


def test_unknown_reasons():
    report = explore(analysis_of(corpus_source("oob.wat")))
    assert report.outcome("no-assert-failure").reason == "symbolic-address"

    loop = analysis_of(corpus_source("bounded_loop.wat"))
    report = explore(loop, ExploreBounds(loop_unroll=2))
    assert report.outcome("no-assert-failure").outcome == UNKNOWN
    assert report.outcome("no-assert-failure").reason == "loop-bound"

    report = explore(analysis_of(corpus_source("dispatch.wat")), ExploreBounds(max_paths=1))
    assert report.outcome("never-traps").outcome == UNKNOWN
    assert report.outcome("never-traps").reason == "path-bound"


def test_matches_exhaustive_concrete_runs():
    rng = random.Random(2024)
    for n in range(20):
        source = random_program(rng)
        module, _, _ = assemble(source)
        results = [run_concrete(module, "f", (x,)) for x in range(256)]
        asserts_fail = any(isinstance(r, Trapped) and r.reason == TrapReason.ASSERT_FAILED for r in results)
        any_trap = any(isinstance(r, Trapped) for r in results)

        report = explore(analysis_of(source), WIDE)
        assertions = report.outcome("no-assert-failure")
        traps = report.outcome("never-traps")
        assert assertions.outcome == (VIOLATED if asserts_fail else VALID), (n, source)
        assert traps.outcome == (VIOLATED if any_trap else VALID), (n, source)

        for p in (assertions, traps):
            if p.witness is not None:
                replay = run_concrete(module, "f", p.witness.args)
                assert isinstance(replay, Trapped), (n, source)
                assert (replay.reason, replay.byte_offset) == (p.witness.trap, p.witness.byte_offset)


def test_report_is_deterministic():
    source = corpus_source("checked_index.wat")
    first = explore(analysis_of(source))
    second = explore(analysis_of(source))
    assert first.property_outcomes == second.property_outcomes
    assert first.verdicts() == second.verdicts()


def test_parallel_entries_give_the_same_report():
    source = """(module
  (import "env" "tcpa_assert" (func $assert (param i32)))
  (func (export "one") (param $x i32) (result i32)
    local.get $x
    i32.const 3
    i32.lt_u
    call $assert
    local.get $x)
  (func (export "two") (param $y i32) (result i32)
    local.get $y
    i32.const 255
    i32.and)
)
"""
    serial = explore(analysis_of(source), ExploreBounds(workers=1))
    threaded = explore(analysis_of(source), ExploreBounds(workers=2))
    assert serial.property_outcomes == threaded.property_outcomes
    assert serial.outcome("no-assert-failure").witness.function == "one"


def test_targeted_property_only_explores_its_export():
    source = corpus_source("checked_index.wat")
    a = analysis_of(source, "only-index assertion_unreachable index\n")
    assert a.entries == ("index",)
    with pytest.raises(UnknownTarget):
        analysis_of(source, "p assertion_unreachable missing\n")


def test_source_map_must_cover_the_module():
    _, data, _ = assemble(corpus_source("add.wat"))
    with pytest.raises(IncompleteSourceMap):
        init_analysis(parse_module(data), SourceMap([]), PropertySet.parse(DEFAULT_PROPS_TEXT))


@pytest.mark.parametrize("source", [
    '(module (func (export "f") (result i32) i32.add))',
    '(module (func (export "f") (result i64) i32.const 1 i64.const 2 i64.add))',
])
def test_ill_typed_programs_never_reach_exploration(source):
    with pytest.raises(AssemblySyntaxError):
        analysis_of(source)


def test_hand_built_ill_typed_module_is_refused():
    f = Function(0, FunctionType((), (I32,)), (), (Instruction(0x6A), Instruction(0x0B)))
    m = Module(types=(f.type,), functions=(f,), exports=(Export("f", 0, 0),))
    with pytest.raises(ValidationFailure):
        init_analysis(m, SourceMap([]), PropertySet.parse(DEFAULT_PROPS_TEXT))


GUARDED = """(module
  (func (export "f") (param $a i32) (result i32) (local $b i32)
    local.get $a
    i32.const 1
    i32.add
    local.set $b
    local.get $a
    if
      i32.const 7
      local.set $b
    end
    local.get $b)
)
"""


def _final_configurations(source: str, entry: str = "f"):
    a = analysis_of(source)
    todo = [initial_configuration(a, entry)]
    done = []
    while todo:
        c = todo.pop()
        if c.returned or c.halt is not None:
            done.append(c)
            continue
        todo.extend(step(a, c))
    return a, done


def test_dependency_graph_edges():
    a, finals = _final_configurations(GUARDED)
    assert len(finals) == 2
    body = a.module.functions[0].body
    cond = condition_vertex(0, body[5].byte_offset)
    a_vertex, b_vertex = local_vertex(0, 0), local_vertex(0, 1)
    for c in finals:
        assert c.graph.has_edge(a_vertex, b_vertex, DATA_FLOW)
        assert Dependency(a_vertex, DATA_FLOW) in dependencies_of(c.graph, b_vertex)
    taken = next(c for c in finals if c.path_condition.conjuncts[-1].taken)
    assert taken.graph.has_edge(a_vertex, cond, DATA_FLOW)
    assert taken.graph.has_edge(cond, b_vertex, CONTROL_FLOW)
    skipped = next(c for c in finals if not c.path_condition.conjuncts[-1].taken)
    assert not skipped.graph.has_edge(cond, b_vertex, CONTROL_FLOW)


BOUNDARY_INPUTS = (0, 1, 99, 100, 101, 2**31 - 1, 2**31, 2**32 - 1)


def _assert_paths_partition(finals, inputs, context):
    for x in inputs:
        holding = [c for c in finals if c.path_condition.holds({"arg0": x})]
        assert len(holding) == 1, (context, x)
    for i, first in enumerate(finals):
        for second in finals[i + 1:]:
            both = PathCondition(first.path_condition.conjuncts + second.path_condition.conjuncts)
            assert not check_sat(both).is_sat, context


@pytest.mark.parametrize("source,entry", [
    (GUARDED, "f"),
    (corpus_source("clamp.wat"), "clamp"),
    (corpus_source("checked_index.wat"), "index"),
])
def test_completed_paths_are_pairwise_disjoint(source, entry):
    _, finals = _final_configurations(source, entry)
    assert len(finals) >= 2
    _assert_paths_partition(finals, range(256), entry)
    _assert_paths_partition(finals, BOUNDARY_INPUTS, entry)


def test_generated_programs_split_their_inputs():
    rng = random.Random(31)
    for n in range(10):
        source = random_program(rng)
        _, finals = _final_configurations(source)
        _assert_paths_partition(finals, range(256), (n, source))


GROWING_BOUNDS = (
    ExploreBounds(max_paths=1, max_depth=40, loop_unroll=1),
    ExploreBounds(max_paths=4, max_depth=200, loop_unroll=2),
    ExploreBounds(max_paths=64, loop_unroll=4),
    ExploreBounds(),
)


def _settled_outcomes(source: str, growing=GROWING_BOUNDS) -> list[dict[str, Outcome]]:
    module, _, _ = assemble(source)
    runs = []
    for bounds in growing:
        report = explore(analysis_of(source), bounds)
        for p in report.property_outcomes:
            if p.outcome == VIOLATED:
                replay = run_concrete(module, p.witness.function, p.witness.args)
                assert isinstance(replay, Trapped)
                assert (replay.reason, replay.byte_offset) == (p.witness.trap, p.witness.byte_offset)
        runs.append({p.id: p.outcome for p in report.property_outcomes})
    return runs


def _assert_never_flips(runs, context):
    for smaller, larger in zip(runs, runs[1:]):
        for pid, outcome in smaller.items():
            if outcome != UNKNOWN:
                assert larger[pid] == outcome, (context, pid)


def test_larger_bounds_never_flip_a_settled_verdict(corpus):
    for path in sorted(corpus.glob("*.wat")):
        runs = _settled_outcomes(corpus_source(path.name))
        _assert_never_flips(runs, path.name)


def test_generated_programs_keep_their_verdicts_as_bounds_grow():
    rng = random.Random(8)
    for n in range(8):
        source = random_program(rng)
        _assert_never_flips(_settled_outcomes(source, (*GROWING_BOUNDS, WIDE)), (n, source))


def test_nop_drop_and_select_explore():
    source = """(module
  (import "env" "tcpa_assert" (func $assert (param i32)))
  (func (export "pick") (param $c i32) (result i32)
    nop
    i32.const 7
    drop
    i32.const 1
    i32.const 2
    local.get $c
    select
    i32.const 3
    i32.lt_u
    call $assert
    i32.const 0)
)
"""
    report = explore(analysis_of(source))
    assert report.outcome("no-assert-failure").outcome == VALID
    assert report.outcome("never-traps").outcome == VALID
