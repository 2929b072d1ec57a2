"""Overhead benchmark: plain analysis against the full isolated pipeline.

Plain mode parses the prebuilt executable and calls ``explore`` directly.
Isolated mode loads an IC on a simulated platform and runs the whole
provider session over an in-process channel (attestation, key agreement,
encrypted submission, rebuild, analysis, certificate) followed by consumer
verification. Memory is the tracemalloc peak of each run.
"""
from __future__ import annotations

import json
import logging
import time
import tracemalloc
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional

from . import security
from .binary import parse_module
from .build_check import BuildFailed
from .models import AnalyzerConfig, BenchRecord, BuilderConfig, CheckBudget, ExploreBounds
from .properties import PropertyError, PropertySet
from .protocol import LocalChannel, ProtocolError, consumer_verify, provider_run
from .report import AnalysisReport, Outcome
from .security import Randomness
from .symexec import SymexecError, explore, init_analysis
from .tee import Manufacturer, Platform, load_ic, platform_setup
from .text import SourceMap, assemble
from .wasm import WasmError, count_instructions

logger = logging.getLogger(__name__)

CORPUS_DIR = Path(__file__).parent / "corpus"

DEFAULT_PROPS = PropertySet.parse(
    "no-assert-failure assertion_unreachable\n"
    "never-traps no_trap\n"
)

MODES = ("plain", "isolated")


@dataclass
class _Probe:
    seconds: float = 0.0
    peak: int = 0


@contextmanager
def allocation_probe() -> Iterator[_Probe]:
    """Wall time and peak traced allocation of the enclosed block."""
    was_tracing = tracemalloc.is_tracing()
    if not was_tracing:
        tracemalloc.start()
    tracemalloc.reset_peak()
    probe = _Probe()
    started = time.perf_counter()
    try:
        yield probe
    finally:
        probe.seconds = time.perf_counter() - started
        probe.peak = tracemalloc.get_traced_memory()[1]
        if not was_tracing:
            tracemalloc.stop()


@dataclass(frozen=True)
class BenchJob:
    file: str
    source: bytes
    executable: bytes
    source_map: SourceMap
    instructions: int
    props: PropertySet


def corpus_props(path: Path) -> PropertySet:
    """``name.props`` next to the program, else the directory's ``default.props``."""
    for candidate in (path.with_suffix(".props"), path.parent / "default.props"):
        if candidate.is_file():
            return PropertySet.parse(candidate.read_text(encoding="utf-8"))
    return DEFAULT_PROPS


def load_job(path: Path, props: Optional[PropertySet] = None) -> BenchJob:
    source = path.read_bytes()
    module, executable, source_map = assemble(source.decode("utf-8"))
    return BenchJob(path.name, source, executable, source_map, count_instructions(module),
                    props if props is not None else corpus_props(path))


def corpus_files(corpus: Path) -> list[Path]:
    if corpus.is_file():
        return [corpus]
    return sorted(corpus.glob("*.wat"))


def run_plain(job: BenchJob, bounds: ExploreBounds) -> tuple[AnalysisReport, _Probe]:
    with allocation_probe() as probe:
        analysis = init_analysis(parse_module(job.executable), job.source_map, job.props)
        report = explore(analysis, bounds)
    return report, probe


class IsolatedRunner:
    """One simulated platform shared by every isolated run of a bench."""

    def __init__(self, rng: Optional[Randomness] = None):
        self.rng = rng
        self.manufacturer = Manufacturer(rng)
        self.platform: Platform = platform_setup(self.manufacturer, rng)
        self.builder = BuilderConfig().to_bytes()

    def run(self, job: BenchJob, bounds: ExploreBounds) -> tuple[AnalysisReport, bool, _Probe]:
        x_code = AnalyzerConfig(bounds=bounds).to_yaml()
        p_props = job.props.to_bytes()
        rot_pub = self.manufacturer.rot_pub
        with allocation_probe() as probe:
            ic_id, _ = load_ic(self.platform, x_code, self.builder, p_props)
            with LocalChannel(self.platform, ic_id) as channel:
                outcome = provider_run(channel, rot_pub, x_code, self.builder, p_props,
                                       job.source, job.executable, rng=self.rng)
            verdict = consumer_verify(outcome.chain, rot_pub, x_code, self.builder, p_props)
        return outcome.cc.report, bool(verdict), probe


def bench_file(path: Path, bounds: ExploreBounds, modes: Iterable[str],
               runner: Optional[IsolatedRunner] = None) -> BenchRecord:
    modes = set(modes)
    record = BenchRecord(file=path.name)
    try:
        job = load_job(path)
        record.instructions = job.instructions
        if "plain" in modes:
            report, probe = run_plain(job, bounds)
            record.time_plain, record.mem_plain = probe.seconds, probe.peak
            record.verdicts_plain = report.verdicts()
        if "isolated" in modes:
            runner = runner or IsolatedRunner(security.default_randomness())
            report, accepted, probe = runner.run(job, bounds)
            record.time_isolated, record.mem_isolated = probe.seconds, probe.peak
            record.verdicts_isolated = report.verdicts()
            record.accepted = accepted
    except (OSError, UnicodeDecodeError, WasmError, BuildFailed, PropertyError,
            SymexecError, ProtocolError) as e:
        record.error = f"{type(e).__name__}: {e}"
        logger.warning(f"{path.name}: {record.error}")
    except Exception as e:
        record.error = f"{type(e).__name__}: {e}"
        logger.exception(f"{path.name}: analyser crashed")
    return record


def run_bench(corpus: Path, bounds: Optional[ExploreBounds] = None,
              modes: Iterable[str] = MODES, rng: Optional[Randomness] = None) -> list[BenchRecord]:
    """Files run one after another so timings do not interfere."""
    bounds = bounds or ExploreBounds()
    modes = tuple(modes)
    runner = IsolatedRunner(rng if rng is not None else security.default_randomness()) \
        if "isolated" in modes else None
    records = []
    for path in corpus_files(corpus):
        record = bench_file(path, bounds, modes, runner)
        if record.verdicts_plain and record.verdicts_isolated and \
                record.verdicts_plain != record.verdicts_isolated:
            logger.error(f"{path.name}: verdicts differ between modes")
        records.append(record)
    logger.info(f"benchmarked {len(records)} files in modes {', '.join(modes)}")
    return records


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

def _average(values: list[Optional[float]]) -> Optional[float]:
    present = [v for v in values if v is not None]
    return sum(present) / len(present) if present else None


def _pct(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.1f}%"


def _table(title: str, unit: str, records: list[BenchRecord], plain_of, isolated_of, overhead_of, fmt) -> list[str]:
    width = max([len("file")] + [len(r.file) for r in records] + [len("average")])
    header = f"{'file':<{width}}  {'instr':>6}  {'plain ' + unit:>14}  {'isolated ' + unit:>14}  {'overhead':>9}"
    lines = [title, header, "-" * len(header)]
    for r in records:
        if r.error:
            lines.append(f"{r.file:<{width}}  {r.instructions:>6}  error: {r.error}")
            continue
        lines.append(f"{r.file:<{width}}  {r.instructions:>6}  {fmt(plain_of(r)):>14}  "
                     f"{fmt(isolated_of(r)):>14}  {_pct(overhead_of(r)):>9}")
    ok = [r for r in records if not r.error]
    avg = _average([overhead_of(r) for r in ok])
    lines.append(f"{'average':<{width}}  {'':>6}  {'':>14}  {'':>14}  {_pct(avg):>9}")
    return lines


def format_table(records: list[BenchRecord]) -> str:
    """Time and memory tables, each closed by an average-overhead row."""
    lines = _table("Time cost (s)", "s", records,
                   lambda r: r.time_plain, lambda r: r.time_isolated, lambda r: r.overhead_time,
                   lambda v: f"{v:.4f}")
    lines.append("")
    lines += _table("Memory cost (KB)", "KB", records,
                    lambda r: r.mem_plain, lambda r: r.mem_isolated, lambda r: r.overhead_mem,
                    lambda v: f"{v / 1024:.1f}")
    lines.append("")
    width = max([len("file")] + [len(r.file) for r in records])
    lines.append(f"{'file':<{width}}  verdicts")
    for r in records:
        verdicts = r.verdicts_plain or r.verdicts_isolated or "-"
        same = "" if not (r.verdicts_plain and r.verdicts_isolated) else \
            ("  (modes agree)" if r.verdicts_plain == r.verdicts_isolated else "  (MODES DIFFER)")
        accepted = "" if r.accepted is None else f"  consumer={'accepted' if r.accepted else 'rejected'}"
        lines.append(f"{r.file:<{width}}  {verdicts}{same}{accepted}")
    return "\n".join(lines) + "\n"


def record_lines(records: list[BenchRecord]) -> str:
    """One ``RECORD {json}`` line per file."""
    out = []
    for r in records:
        doc = r.model_dump()
        doc["overhead_time"] = r.overhead_time
        doc["overhead_mem"] = r.overhead_mem
        out.append("RECORD " + json.dumps(doc, sort_keys=True))
    return "\n".join(out) + ("\n" if out else "")


# ---------------------------------------------------------------------------
# Solver budget sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    max_millis: int
    valid: int
    violated: int
    unknown: int
    completed_paths: int
    seconds: float
    failed: int = 0


def sweep_solver_budget(corpus: Path, budgets: Iterable[int],
                        bounds: Optional[ExploreBounds] = None) -> list[SweepRow]:
    bounds = bounds or ExploreBounds()
    jobs = []
    for path in corpus_files(corpus):
        try:
            jobs.append(load_job(path))
        except (OSError, UnicodeDecodeError, WasmError, PropertyError) as e:
            logger.warning(f"{path.name}: skipped in sweep: {e}")
    rows = []
    for millis in budgets:
        budget = CheckBudget(max_millis=millis, max_enumeration=bounds.per_path_solver_budget.max_enumeration)
        swept = bounds.model_copy(update={"per_path_solver_budget": budget})
        counts = {o: 0 for o in Outcome}
        completed = failed = 0
        started = time.perf_counter()
        for job in jobs:
            try:
                report, _ = run_plain(job, swept)
            except Exception as e:
                failed += 1
                logger.warning(f"{job.file}: failed at solver budget {millis} ms: {type(e).__name__}: {e}")
                continue
            for p in report.property_outcomes:
                counts[p.outcome] += 1
            completed += report.stats.completed
        rows.append(SweepRow(millis, counts[Outcome.VALID], counts[Outcome.VIOLATED], counts[Outcome.UNKNOWN],
                             completed, time.perf_counter() - started, failed))
        logger.info(f"solver budget {millis} ms: {counts[Outcome.UNKNOWN]} unknown outcomes")
    return rows


def format_sweep(rows: list[SweepRow]) -> str:
    header = (f"{'solver ms':>9}  {'valid':>5}  {'violated':>8}  {'unknown':>7}  {'paths':>6}  "
              f"{'time (s)':>8}  {'failed':>6}")
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{r.max_millis:>9}  {r.valid:>5}  {r.violated:>8}  {r.unknown:>7}  "
                     f"{r.completed_paths:>6}  {r.seconds:>8.3f}  {r.failed:>6}")
    return "\n".join(lines) + "\n"
