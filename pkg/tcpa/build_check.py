"""Builder execution and the executable-equality outcome eo."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Protocol

from . import security
from .models import BuilderConfig
from .text import AssemblySyntaxError, SourceMap, UnsupportedConstruct, assemble_text
from .wasm import WasmError

logger = logging.getLogger(__name__)


class BuildFailed(Exception):
    def __init__(self, diagnostics: str, line: int = 0, column: int = 0):
        super().__init__(diagnostics)
        self.diagnostics = diagnostics
        self.line = line
        self.column = column


def build_executable(b: BuilderConfig, source: str | bytes) -> tuple[bytes, SourceMap]:
    """Build S with B. Only the reference assembler exists, and it is deterministic."""
    if isinstance(source, bytes):
        try:
            source = source.decode("utf-8")
        except UnicodeDecodeError as e:
            raise BuildFailed(f"source is not UTF-8: {e}") from e
    try:
        return assemble_text(source)
    except (AssemblySyntaxError, UnsupportedConstruct) as e:
        raise BuildFailed(str(e), e.line, e.column) from e
    except WasmError as e:
        raise BuildFailed(str(e)) from e


def compare_executables(e: bytes, e_prime: bytes) -> bool:
    return bytes(e) == bytes(e_prime)


class ExecutableChecker(Protocol):
    def equivalent(self, e: bytes, e_prime: bytes) -> bool:
        ...


class SyntacticChecker:
    def equivalent(self, e: bytes, e_prime: bytes) -> bool:
        eo = compare_executables(e, e_prime)
        if eo and security.hash(e) != security.hash(e_prime):
            raise AssertionError("equal executables with different digests")
        return eo


class SemanticChecker:
    """Behavioural equivalence of two executables. Not available yet."""

    def equivalent(self, e: bytes, e_prime: bytes) -> bool:
        raise NotImplementedError("semantic executable checking is not implemented")


@dataclass(frozen=True)
class BuildCheck:
    eo: bool
    # executable the compliance certificate describes
    executable: bytes
    # what B produced from S; the analysis runs on this one
    rebuilt: bytes
    source_map: SourceMap


def check_build(b: BuilderConfig, source: str | bytes, e: bytes,
                checker: ExecutableChecker | None = None) -> BuildCheck:
    e_prime, source_map = build_executable(b, source)
    if b.return_executable:
        logger.info(f"returning rebuilt executable ({len(e_prime)} bytes) instead of comparing")
        return BuildCheck(True, e_prime, e_prime, source_map)
    eo = (checker or SyntacticChecker()).equivalent(e, e_prime)
    logger.info(f"executable check: eo={eo} ({len(e)} vs {len(e_prime)} bytes)")
    return BuildCheck(eo, e, e_prime, source_map)
