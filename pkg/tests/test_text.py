import random

import pytest

from tcpa.binary import parse_module
from tcpa.text import (
    AssemblySyntaxError,
    SourceLocation,
    SourceMap,
    UnsupportedConstruct,
    assemble,
    assemble_text,
)
from tcpa.wasm import Module

from tests.helpers import corpus_source, random_module_text, random_program

ADD = """(module
  (func $add (export "add") (param $a i32) (param $b i32) (result i32)
    local.get $a
    local.get $b
    i32.add)
)
"""


def test_source_map_is_a_bijection_over_instructions(corpus):
    for path in sorted(corpus.glob("*.wat")):
        module, _, source_map = assemble(corpus_source(path.name))
        offsets = [ins.byte_offset for f in module.functions for ins in f.body]
        assert len(set(offsets)) == len(offsets) == len(source_map)
        assert source_map.covers(module)
        for off in offsets:
            assert source_map.offset_of(source_map.location_of(off)) == off


def test_locations_point_at_instruction_tokens():
    module, _, source_map = assemble(ADD)
    body = module.functions[0].body
    assert str(source_map.location_of(body[0].byte_offset)) == "3:5"
    assert str(source_map.location_of(body[2].byte_offset)) == "5:5"
    # the implicit final end sits on the closing paren of the func
    assert source_map.location_of(body[-1].byte_offset) == SourceLocation(5, 12)


def test_source_map_text_form():
    _, _, source_map = assemble(ADD)
    assert SourceMap.from_text(source_map.to_text()) == source_map
    with pytest.raises(ValueError):
        SourceMap.from_text("1 2 3\n")
    with pytest.raises(ValueError):
        SourceMap([(0, 1, 1), (0, 2, 1)])


def test_synthetic_map_covers_parsed_module():
    _, data, _ = assemble(corpus_source("calls.wat"))
    module = parse_module(data)
    assert SourceMap.synthetic(module).covers(module)


def test_assembly_is_deterministic():
    gen = random.Random(7)
    for _ in range(10):
        text = random_module_text(gen)
        assert assemble_text(text) == assemble_text(text)


def test_generated_programs_parse_back_identically():
    gen = random.Random(3)
    for _ in range(40):
        module, data, _ = assemble(random_program(gen))
        assert parse_module(data) == module


def test_empty_source_is_the_empty_module():
    module, data, source_map = assemble(";; nothing here\n")
    assert module == Module()
    assert len(source_map) == 0
    assert parse_module(data) == Module()


@pytest.mark.parametrize("source,line,column", [
    ("(module\n  (func\n    i32.const)\n)", 3, 5),
    ("(module\n  (func (result i32)\n    nop2 1)\n)", 3, 5),
    ("(module\n  (func\n    local.get $nope)\n)", 3, 15),
    ("(module\n  (func\n    end)\n)", 3, 5),
    ("(module\n  (func\n", 2, 3),
    ('(module (export "x" (func 0)) "stray")', 1, 31),
])
def test_syntax_errors_carry_line_and_column(source, line, column):
    with pytest.raises(AssemblySyntaxError) as info:
        assemble(source)
    assert (info.value.line, info.value.column) == (line, column)


@pytest.mark.parametrize("source,construct", [
    ("(module\n  (func (result i32)\n    (i32.const 1))\n)", "folded instruction"),
    ("(module\n  (func (param f32)))", "f32 value type"),
    ("(module\n  (func (result i32)\n    f32.const 1))", "f32.const"),
    ('(module (import "env" "print" (func (param i32))))', "import env.print"),
    ('(module (data (i32.const 0) "x"))', "(data)"),
])
def test_unsupported_constructs_are_named(source, construct):
    with pytest.raises(UnsupportedConstruct) as info:
        assemble(source)
    assert info.value.construct == construct
    assert info.value.line >= 1 and info.value.column >= 1


def test_folded_instruction_position():
    with pytest.raises(UnsupportedConstruct) as info:
        assemble("(module\n  (func (result i32)\n    (i32.const 1))\n)")
    assert (info.value.line, info.value.column) == (3, 5)


def test_labels_and_memargs():
    source = """(module
  (memory 1)
  (func (export "f") (param $p i32) (result i32)
    block $out
      local.get $p
      br_if $out
      local.get $p
      i32.load offset=8 align=2
      drop
    end $out
    local.get $p
    i32.load8_u offset=3)
)
"""
    module, _, _ = assemble(source)
    body = module.functions[0].body
    assert body[2].immediates == (0,)
    assert body[4].immediates == (1, 8)
    assert body[-2].immediates == (0, 3)


@pytest.mark.parametrize("source,line,column", [
    ('(module\n  (func (export "f") (result i32)\n    i32.add)\n)', 3, 5),
    ('(module\n  (func (export "f") (result i64)\n    i32.const 1\n    i64.const 2\n    i64.add)\n)', 5, 5),
    ('(module\n  (func (export "f")\n    i32.const 1)\n)', 3, 16),
    ("(module\n  (func (param $x i32) (result i32)\n    local.get $x\n    if (result i32)\n"
     "      i32.const 1\n    end)\n)", 6, 5),
    ("(module\n  (func (param $x i64)\n    local.get $x\n    if\n    end)\n)", 4, 5),
])
def test_ill_typed_bodies_point_at_the_instruction(source, line, column):
    with pytest.raises(AssemblySyntaxError) as info:
        assemble(source)
    assert (info.value.line, info.value.column) == (line, column)
    assert "validation failed" in info.value.message


def test_well_typed_block_results_assemble():
    source = """(module
  (func (export "f") (param $x i32) (result i32)
    block (result i32)
      i32.const 1
      local.get $x
      br_if 0
      drop
      local.get $x
      if (result i32)
        i32.const 2
      else
        unreachable
      end
    end)
  (func (export "g") (result i32)
    unreachable
    i32.add)
)
"""
    module, _, _ = assemble(source)
    assert len(module.functions) == 2
