"""Semantic dependency graph built alongside symbolic execution.

Graphs are persistent: ``extend`` returns a new graph that shares structure
with its parent, so forked configurations can keep their own graphs cheaply.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

DATA_FLOW = "data_flow"
CONTROL_FLOW = "control_flow"

# chains longer than this are flattened on extend
_MAX_CHAIN = 64


class UnknownVertex(KeyError):
    pass


@dataclass(frozen=True)
class Dependency:
    vertex: str
    kind: str


def local_vertex(func_index: int, index: int) -> str:
    return f"f{func_index}.local{index}"


def global_vertex(index: int) -> str:
    return f"global{index}"


def memory_vertex(address: int) -> str:
    return f"mem[{address}]"


def condition_vertex(func_index: int, byte_offset: int) -> str:
    return f"cond@f{func_index}:{byte_offset}"


Edge = tuple[str, str, str]


class SemanticGraph:
    __slots__ = ("_parent", "_vertices", "_edges", "_depth", "_flat")

    def __init__(self, vertices: Iterable[str] = (), edges: Iterable[Edge] = (),
                 parent: Optional["SemanticGraph"] = None):
        self._parent = parent
        self._vertices = frozenset(vertices)
        self._edges = frozenset(edges)
        self._depth = parent._depth + 1 if parent is not None else 0
        self._flat: Optional[tuple[frozenset[str], frozenset[Edge]]] = None

    def extend(self, vertices: Iterable[str] = (), edges: Iterable[Edge] = ()) -> "SemanticGraph":
        vertices = frozenset(vertices)
        edges = frozenset(edges)
        for src, dst, kind in edges:
            if kind not in (DATA_FLOW, CONTROL_FLOW):
                raise ValueError(f"unknown edge kind {kind}")
        if not vertices and not edges:
            return self
        if self._depth >= _MAX_CHAIN:
            all_v, all_e = self._flatten()
            return SemanticGraph(all_v | vertices | {v for e in edges for v in e[:2]}, all_e | edges)
        return SemanticGraph(vertices | {v for e in edges for v in e[:2]}, edges, self)

    def _flatten(self) -> tuple[frozenset[str], frozenset[Edge]]:
        if self._flat is None:
            vs: set[str] = set()
            es: set[Edge] = set()
            g: Optional[SemanticGraph] = self
            while g is not None:
                vs |= g._vertices
                es |= g._edges
                g = g._parent
            self._flat = (frozenset(vs), frozenset(es))
        return self._flat

    @property
    def vertices(self) -> frozenset[str]:
        return self._flatten()[0]

    @property
    def edges(self) -> frozenset[Edge]:
        return self._flatten()[1]

    def __contains__(self, vertex: object) -> bool:
        return vertex in self.vertices

    def has_edge(self, src: str, dst: str, kind: Optional[str] = None) -> bool:
        return any(e[0] == src and e[1] == dst and (kind is None or e[2] == kind) for e in self.edges)


def dependencies_of(g: SemanticGraph, v: str) -> set[Dependency]:
    """Everything ``v`` transitively depends on.

    Each dependency is labelled with the kind of the edge leaving it on some
    path to ``v``; a vertex reached both ways appears twice.
    """
    if v not in g:
        raise UnknownVertex(v)
    incoming: dict[str, list[tuple[str, str]]] = {}
    for src, dst, kind in g.edges:
        incoming.setdefault(dst, []).append((src, kind))
    out: set[Dependency] = set()
    seen = {v}
    todo = [v]
    while todo:
        w = todo.pop()
        for src, kind in incoming.get(w, ()):
            out.add(Dependency(src, kind))
            if src not in seen:
                seen.add(src)
                todo.append(src)
    return out
