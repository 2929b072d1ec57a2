import pytest

from tcpa.build_check import (
    BuildFailed,
    SemanticChecker,
    SyntacticChecker,
    build_executable,
    check_build,
    compare_executables,
)
from tcpa.models import BuilderConfig
from tcpa.text import assemble

from tests.helpers import corpus_source


def test_honest_executable_matches():
    source = corpus_source("clamp.wat")
    _, executable, source_map = assemble(source)
    built = check_build(BuilderConfig(), source.encode(), executable)
    assert built.eo
    assert built.executable == built.rebuilt == executable
    assert built.source_map == source_map


def test_foreign_executable_does_not_match():
    _, other, _ = assemble(corpus_source("add.wat"))
    built = check_build(BuilderConfig(), corpus_source("clamp.wat"), other)
    assert not built.eo
    # the certificate still describes what was submitted; the analysis uses the rebuild
    assert built.executable == other
    assert built.rebuilt != other


def test_single_bit_difference_is_not_equal():
    _, executable, _ = assemble(corpus_source("clamp.wat"))
    flipped = executable[:-1] + bytes([executable[-1] ^ 1])
    assert not compare_executables(executable, flipped)
    assert not SyntacticChecker().equivalent(executable, flipped)
    assert SyntacticChecker().equivalent(executable, bytes(executable))


def test_return_executable_flow():
    source = corpus_source("add.wat")
    _, executable, _ = assemble(source)
    built = check_build(BuilderConfig(return_executable=True), source, b"ignored")
    assert built.eo
    assert built.executable == executable


def test_builds_are_deterministic():
    source = corpus_source("dispatch.wat")
    assert build_executable(BuilderConfig(), source) == build_executable(BuilderConfig(), source)


@pytest.mark.parametrize("source,line,column", [
    ("(module\n  (func\n    i32.const))\n", 3, 5),
    ("(module\n  (func (param f32)))\n", 2, 16),
    ("(module\n  (func (result i32)\n    i32.add))\n", 3, 5),
    ("(module\n  (func (result i64)\n    i32.const 1\n    i64.const 2\n    i64.add))\n", 5, 5),
])
def test_build_failures_carry_a_position(source, line, column):
    with pytest.raises(BuildFailed) as info:
        build_executable(BuilderConfig(), source)
    assert (info.value.line, info.value.column) == (line, column)


def test_non_utf8_source_fails_to_build():
    with pytest.raises(BuildFailed):
        build_executable(BuilderConfig(), b"(module \xff)")


def test_semantic_checking_is_not_available():
    with pytest.raises(NotImplementedError):
        check_build(BuilderConfig(), corpus_source("add.wat"), b"", checker=SemanticChecker())
