"""``tcpa`` command line: developer tools, the three protocol roles and the bench."""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

import click

from . import __version__, config, security
from .bench import CORPUS_DIR, DEFAULT_PROPS, format_sweep, format_table, record_lines, run_bench, sweep_solver_budget
from .binary import parse_module
from .build_check import BuildFailed, build_executable
from .certs import CertificateChain, CertificateError
from .interp import InterpError, Terminated, Trapped, run_concrete
from .models import AnalyzerConfig, BuilderConfig, ConfigError, ExploreBounds
from .properties import PropertyError, PropertySet
from .protocol import (
    AddressInUse,
    AttestationFailed,
    IcError,
    NegotiationFailed,
    ProtocolError,
    SocketChannel,
    consumer_verify,
    provider_run,
    receive_forward,
    send_forward,
    serve_ic,
)
from .registry import PropertyRegistry, RegistryError, Role
from .report import Outcome
from .security import CryptoError
from .solver import export_smtlib
from .symexec import Explorer, PathStatus, SymexecError, explore, init_analysis
from .tee import Manufacturer, TeeError, load_ic, platform_setup
from .text import SourceMap, assemble
from .wasm import WasmError, count_instructions

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_REJECTED = 1
EXIT_USAGE = 2
EXIT_ADDRESS_IN_USE = 3
EXIT_ATTESTATION = 4
EXIT_NEGOTIATION = 5
EXIT_TRANSPORT = 6
EXIT_IC_ERROR = 7

# first match wins, so subclasses come before their bases
_EXIT_CODES: list[tuple[type[BaseException], int]] = [
    (AddressInUse, EXIT_ADDRESS_IN_USE),
    (AttestationFailed, EXIT_ATTESTATION),
    (NegotiationFailed, EXIT_NEGOTIATION),
    (IcError, EXIT_IC_ERROR),
    (ProtocolError, EXIT_TRANSPORT),
    ((WasmError, BuildFailed, PropertyError, ConfigError, CertificateError, RegistryError, CryptoError,
      SymexecError, TeeError, InterpError, UnicodeDecodeError, OSError, ValueError), EXIT_USAGE),
]


def exit_code_for(error: BaseException) -> Optional[int]:
    for types, code in _EXIT_CODES:
        if isinstance(error, types):
            return code
    return None


class TcpaGroup(click.Group):
    """Turns domain errors raised by any subcommand into documented exit codes."""

    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except (click.exceptions.ClickException, click.exceptions.Exit, click.exceptions.Abort):
            raise
        except Exception as e:
            code = exit_code_for(e)
            if code is None:
                raise
            click.echo(f"error: {e}", err=True)
            ctx.exit(code)


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _endpoint(value: str) -> tuple[str, int]:
    host, sep, port = value.rpartition(":")
    if not sep or not port.isdigit():
        raise click.BadParameter(f"expected HOST:PORT, got {value!r}")
    return host or "127.0.0.1", int(port)


def _read_hex(path: Path) -> bytes:
    try:
        return bytes.fromhex(path.read_text(encoding="utf-8").strip())
    except ValueError as e:
        raise click.BadParameter(f"{path} does not hold a hex key") from e


def _write_hex(path: Path, data: bytes) -> None:
    path.write_text(data.hex() + "\n", encoding="utf-8")


def _images(analyzer: Optional[Path], builder: Optional[Path], props: Path) -> tuple[bytes, bytes, bytes]:
    """X, B and P exactly as measured. X and B fall back to the default settings."""
    x_code = analyzer.read_bytes() if analyzer else AnalyzerConfig().to_yaml()
    b_config = builder.read_bytes() if builder else BuilderConfig().to_bytes()
    p_props = PropertySet.parse(props.read_text(encoding="utf-8")).to_bytes()
    return x_code, b_config, p_props


def _load_props(props: Optional[Path]) -> PropertySet:
    if props is None:
        return DEFAULT_PROPS
    return PropertySet.parse(props.read_text(encoding="utf-8"))


def _load_program(path: Path) -> tuple[bytes, SourceMap]:
    """A ``.wat`` file is assembled; a binary uses ``<file>.map`` when present."""
    data = path.read_bytes()
    if path.suffix == ".wat":
        _, executable, source_map = assemble(data.decode("utf-8"))
        return executable, source_map
    map_path = path.with_name(path.name + ".map")
    if map_path.is_file():
        return data, SourceMap.from_text(map_path.read_text(encoding="utf-8"))
    return data, SourceMap.synthetic(parse_module(data))


_readable = click.Path(exists=True, dir_okay=False, readable=True, path_type=Path)


def bounds_options(fn):
    options = [
        click.option("--bounds.max-paths", "max_paths", type=click.IntRange(min=1), help="Paths per entry."),
        click.option("--bounds.max-depth", "max_depth", type=click.IntRange(min=1), help="Steps per path."),
        click.option("--bounds.unroll", "unroll", type=click.IntRange(min=1), help="Back edges per loop."),
        click.option("--solver.ms", "solver_ms", type=click.IntRange(min=1), help="Per-query budget."),
        click.option("--solver.enum", "solver_enum", type=click.IntRange(min=1),
                     help="Largest assignment space enumerated exhaustively."),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _bounds(base: ExploreBounds, max_paths=None, max_depth=None, unroll=None,
            solver_ms=None, solver_enum=None) -> ExploreBounds:
    update = {k: v for k, v in (("max_paths", max_paths), ("max_depth", max_depth), ("loop_unroll", unroll))
              if v is not None}
    budget = base.per_path_solver_budget
    if solver_ms is not None or solver_enum is not None:
        budget = budget.model_copy(update={k: v for k, v in (("max_millis", solver_ms),
                                                             ("max_enumeration", solver_enum)) if v is not None})
    return base.model_copy(update={**update, "per_path_solver_budget": budget})


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

@click.group(cls=TcpaGroup)
@click.version_option(version=__version__, prog_name="tcpa")
def cli() -> None:
    """Trusted and confidential program analysis."""
    logging.basicConfig(level=config.LOG_LEVEL, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


@cli.command("assemble")
@click.argument("source", type=_readable)
@click.option("-o", "--out", type=click.Path(dir_okay=False, path_type=Path), help="Defaults to SOURCE.wasm.")
def cmd_assemble(source: Path, out: Optional[Path]) -> None:
    """Assemble text into a binary module plus a SOURCE.wasm.map source map."""
    executable, source_map = build_executable(BuilderConfig(), source.read_bytes())
    out = out or source.with_suffix(".wasm")
    out.write_bytes(executable)
    out.with_name(out.name + ".map").write_text(source_map.to_text(), encoding="utf-8")
    click.echo(f"{out}: {len(executable)} bytes, {len(source_map)} instructions")


@cli.command("count")
@click.argument("program", type=_readable)
def cmd_count(program: Path) -> None:
    """Print the instruction count of a module."""
    executable, _ = _load_program(program)
    click.echo(str(count_instructions(parse_module(executable))))


@cli.command("run")
@click.argument("program", type=_readable)
@click.argument("entry")
@click.argument("args", nargs=-1, type=int)
@click.option("--fuel", type=click.IntRange(min=1), default=1_000_000, show_default=True)
def cmd_run(program: Path, entry: str, args: tuple[int, ...], fuel: int) -> None:
    """Run an export on concrete arguments."""
    executable, source_map = _load_program(program)
    result = run_concrete(parse_module(executable), entry, list(args), fuel)
    if isinstance(result, Terminated):
        click.echo("returned " + " ".join(str(v) for v in result.values))
    elif isinstance(result, Trapped):
        where = f" ({source_map.location_of(result.byte_offset)})" if result.byte_offset in source_map else ""
        click.echo(f"trapped {result.reason.value} at offset {result.byte_offset}{where}")
        raise click.exceptions.Exit(EXIT_REJECTED)
    else:
        click.echo("out of fuel")
        raise click.exceptions.Exit(EXIT_REJECTED)


def _analysis_inputs(program: Path, props: Optional[Path], analyzer: Optional[Path], overrides: dict):
    executable, source_map = _load_program(program)
    base = AnalyzerConfig.from_yaml(analyzer.read_bytes()).bounds if analyzer else ExploreBounds()
    analysis = init_analysis(parse_module(executable), source_map, _load_props(props))
    return analysis, _bounds(base, **overrides)


@cli.command("analyze")
@click.argument("program", type=_readable)
@click.option("-p", "--props", type=_readable, help="Property set; defaults to no-assert and no-trap.")
@click.option("-x", "--analyzer", type=_readable, help="Analyzer settings (YAML).")
@bounds_options
def cmd_analyze(program: Path, props: Optional[Path], analyzer: Optional[Path], **overrides) -> None:
    """Symbolically analyse a program outside any isolated computation."""
    analysis, bounds = _analysis_inputs(program, props, analyzer, overrides)
    report = explore(analysis, bounds)
    click.echo(report.to_text(), nl=False)
    for p in report.property_outcomes:
        if p.outcome == Outcome.VIOLATED and p.witness is not None:
            w = p.witness
            args = ", ".join(f"{n}={v}" for n, v in w.model)
            click.echo(f"{p.id}: {w.trap.value} in {w.function}({args}) at {w.location or f'offset {w.byte_offset}'}")


@cli.command("smt")
@click.argument("program", type=_readable)
@click.option("-p", "--props", type=_readable)
@click.option("-x", "--analyzer", type=_readable)
@bounds_options
def cmd_smt(program: Path, props: Optional[Path], analyzer: Optional[Path], **overrides) -> None:
    """Print the QF_BV path condition of the first trapping path."""
    analysis, bounds = _analysis_inputs(program, props, analyzer, overrides)
    explorer = Explorer(analysis, bounds)
    for result in explorer.run().values():
        for rec in result.paths:
            if rec.status == PathStatus.TRAPPED:
                click.echo(f"; {rec.entry}: {rec.trap.value} at offset {rec.byte_offset}")
                click.echo(export_smtlib(rec.path_condition), nl=False)
                return
    click.echo("no feasible trapping path", err=True)
    raise click.exceptions.Exit(EXIT_REJECTED)


@cli.command("keygen")
@click.argument("name")
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), default=None,
              help="Defaults to TCPA_DATA_DIR.")
def cmd_keygen(name: str, out_dir: Optional[Path]) -> None:
    """Write NAME.key (private) and NAME.pub (public), hex encoded."""
    out_dir = out_dir or config.DATA_DIR
    out_dir.mkdir(parents=True, exist_ok=True)
    key = security.keygen(security.default_randomness())
    private = out_dir / f"{name}.key"
    _write_hex(private, key.private)
    private.chmod(0o600)
    _write_hex(out_dir / f"{name}.pub", key.public)
    click.echo(f"{out_dir / name}.pub {key.public.hex()}")


# -- registry -------------------------------------------------------------

@cli.group("registry")
def registry() -> None:
    """Dual-signed property registry files."""


@registry.command("create")
@click.option("-p", "--props", type=_readable, required=True)
@click.option("-o", "--out", type=click.Path(dir_okay=False, path_type=Path), required=True)
def registry_create(props: Path, out: Path) -> None:
    reg = PropertyRegistry.create(_load_props(props))
    out.write_bytes(reg.to_bytes())
    click.echo(f"{out}: {len(reg.properties)} properties, unsigned")


@registry.command("sign")
@click.argument("file", type=_readable)
@click.option("--role", type=click.Choice([r.value for r in Role]), required=True)
@click.option("--key", type=_readable, required=True, help="Hex private key file.")
def registry_sign(file: Path, role: str, key: Path) -> None:
    reg = PropertyRegistry.from_bytes(file.read_bytes())
    signed = reg.sign(Role(role), security.keypair_from_private(_read_hex(key)))
    file.write_bytes(signed.to_bytes())
    click.echo(f"{file}: signed as {role}")


@registry.command("verify")
@click.argument("file", type=_readable)
@click.option("--provider-pub", type=_readable)
@click.option("--consumer-pub", type=_readable)
def registry_verify(file: Path, provider_pub: Optional[Path], consumer_pub: Optional[Path]) -> None:
    reg = PropertyRegistry.from_bytes(file.read_bytes())
    ok = reg.verify(_read_hex(provider_pub) if provider_pub else None,
                    _read_hex(consumer_pub) if consumer_pub else None)
    click.echo("valid" if ok else "invalid")
    if not ok:
        raise click.exceptions.Exit(EXIT_REJECTED)


@registry.command("show")
@click.argument("file", type=_readable)
def registry_show(file: Path) -> None:
    reg = PropertyRegistry.from_bytes(file.read_bytes())
    click.echo(reg.properties.to_text(), nl=False)
    for role, pub, sig in (("provider", reg.provider_pub, reg.provider_sig),
                           ("consumer", reg.consumer_pub, reg.consumer_sig)):
        click.echo(f"# {role}: {pub.hex() if pub and sig else 'unsigned'}")


# -- protocol roles ---------------------------------------------------------

def image_options(fn):
    fn = click.option("-p", "--props", type=_readable, required=True, help="Property set P.")(fn)
    fn = click.option("-b", "--builder", type=_readable, help="Builder settings B (canonical JSON).")(fn)
    fn = click.option("-x", "--analyzer", type=_readable, help="Analyzer settings X (YAML).")(fn)
    return fn


@cli.command("ic")
@click.option("--listen", "listen", default="127.0.0.1:7400", show_default=True, help="HOST:PORT")
@image_options
@click.option("--sessions", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--digest-only", is_flag=True, help="Certify only the digest of E.")
@click.option("--data-dir", type=click.Path(file_okay=False, path_type=Path), default=None,
              help="Where rot.pub is written; defaults to TCPA_DATA_DIR.")
def cmd_ic(listen: str, analyzer: Optional[Path], builder: Optional[Path], props: Path,
           sessions: int, digest_only: bool, data_dir: Optional[Path]) -> None:
    """Host an isolated computation on a simulated platform."""
    host, port = _endpoint(listen)
    x_code, b_config, p_props = _images(analyzer, builder, props)
    rng = security.default_randomness()
    man = Manufacturer(rng)
    platform = platform_setup(man, rng)
    ic_id, icc = load_ic(platform, x_code, b_config, p_props, digest_only)
    data_dir = data_dir or config.DATA_DIR
    data_dir.mkdir(parents=True, exist_ok=True)
    _write_hex(data_dir / "rot.pub", man.rot_pub)

    def ready(bound: int) -> None:
        click.echo(f"listening on {host}:{bound} measurement={icc.m_ic.hex()}")

    serve_ic(platform, ic_id, host, port, sessions, on_ready=ready)
    click.echo(f"served {sessions} session(s)")


@cli.command("provider")
@click.option("--connect", required=True, help="IC endpoint HOST:PORT.")
@image_options
@click.option("-s", "--source", type=_readable, required=True, help="Confidential source S.")
@click.option("-e", "--executable", type=_readable, help="Executable E; built from S when omitted.")
@click.option("--rot", type=_readable, help="Root-of-trust public key; defaults to TCPA_DATA_DIR/rot.pub.")
@click.option("--key", type=_readable, help="Provider private key; adds an origin certificate.")
@click.option("-o", "--out", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="Defaults to TCPA_DATA_DIR/chain.tcpc.")
@click.option("--forward", default=None, help="Consumer endpoint HOST:PORT to forward the chain to.")
def cmd_provider(connect: str, analyzer: Optional[Path], builder: Optional[Path], props: Path, source: Path,
                 executable: Optional[Path], rot: Optional[Path], key: Optional[Path], out: Optional[Path],
                 forward: Optional[str]) -> None:
    """Have an isolated computation certify S without revealing it."""
    x_code, b_config, p_props = _images(analyzer, builder, props)
    s = source.read_bytes()
    e = executable.read_bytes() if executable else build_executable(BuilderConfig.from_bytes(b_config), s)[0]
    rot_pub = _read_hex(rot or config.DATA_DIR / "rot.pub")
    a_keypair = security.keypair_from_private(_read_hex(key)) if key else None
    rng = security.default_randomness()

    host, port = _endpoint(connect)
    with SocketChannel(host, port) as channel:
        outcome = provider_run(channel, rot_pub, x_code, b_config, p_props, s, e, a_keypair, rng)
    chain = outcome.chain
    out = out or config.DATA_DIR / "chain.tcpc"
    out.write_bytes(chain.to_bytes())
    report = outcome.cc.report
    click.echo(f"{out}: eo={'true' if report.eo else 'false'} {report.verdicts()}")
    if forward:
        send_forward(chain, *_endpoint(forward))
        click.echo(f"forwarded to {forward}")


@cli.command("consumer")
@image_options
@click.option("--chain", "chain_file", type=_readable, help="Certificate chain file.")
@click.option("--listen", default=None, help="Receive the chain from the provider on HOST:PORT.")
@click.option("--rot", type=_readable, help="Root-of-trust public key; defaults to TCPA_DATA_DIR/rot.pub.")
@click.option("--provider-pub", type=_readable, help="Require an origin certificate by this key.")
def cmd_consumer(analyzer: Optional[Path], builder: Optional[Path], props: Path, chain_file: Optional[Path],
                 listen: Optional[str], rot: Optional[Path], provider_pub: Optional[Path]) -> None:
    """Verify a certificate chain against the expected X, B and P."""
    if (chain_file is None) == (listen is None):
        raise click.UsageError("give exactly one of --chain and --listen")
    x_code, b_config, p_props = _images(analyzer, builder, props)
    rot_pub = _read_hex(rot or config.DATA_DIR / "rot.pub")
    if chain_file is not None:
        chain = CertificateChain.from_bytes(chain_file.read_bytes())
    else:
        host, port = _endpoint(listen)
        chain = receive_forward(host, port, on_ready=lambda bound: click.echo(f"listening on {host}:{bound}"))
    outcome = consumer_verify(chain, rot_pub, x_code, b_config, p_props,
                              _read_hex(provider_pub) if provider_pub else None)
    click.echo(str(outcome))
    if not outcome:
        if outcome.detail:
            click.echo(outcome.detail)
        raise click.exceptions.Exit(EXIT_REJECTED)


# -- bench ------------------------------------------------------------------

def _budgets(value: Optional[str]) -> list[int]:
    if not value:
        return []
    try:
        budgets = [int(v) for v in value.split(",") if v.strip()]
    except ValueError as e:
        raise click.BadParameter("expected comma-separated milliseconds") from e
    if any(b <= 0 for b in budgets):
        raise click.BadParameter("budgets must be positive")
    return budgets


@cli.command("bench")
@click.argument("corpus", type=click.Path(exists=True, path_type=Path), default=CORPUS_DIR)
@click.option("--mode", type=click.Choice(["plain", "isolated", "both"]), default="both", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), help="Also write the tables here.")
@click.option("--sweep-solver-ms", "sweep", default=None, help="Comma-separated solver budgets to sweep.")
@bounds_options
def cmd_bench(corpus: Path, mode: str, out: Optional[Path], sweep: Optional[str], **overrides) -> None:
    """Time and memory overhead of isolated analysis over plain analysis."""
    bounds = _bounds(ExploreBounds(), **overrides)
    budgets = _budgets(sweep)
    if budgets:
        text = format_sweep(sweep_solver_budget(corpus, budgets, bounds))
    else:
        modes = ("plain", "isolated") if mode == "both" else (mode,)
        records = run_bench(corpus, bounds, modes)
        text = format_table(records) + record_lines(records)
    click.echo(text, nl=False)
    if out:
        out.write_text(text, encoding="utf-8")
