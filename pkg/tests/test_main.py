import queue
import socket
import threading

import pytest
from click.testing import CliRunner

from tcpa.binary import parse_module
from tcpa.certs import Stage
from tcpa.main import (
    EXIT_ADDRESS_IN_USE,
    EXIT_ATTESTATION,
    EXIT_REJECTED,
    EXIT_USAGE,
    cli,
    exit_code_for,
)
from tcpa.protocol import AddressInUse, AttestationFailed, IcError, TransportError, serve_ic
from tcpa.security import keygen
from tcpa.wasm import count_instructions

from tests.helpers import DEFAULT_PROPS_TEXT, corpus_source


@pytest.fixture
def runner() -> CliRunner:
    return CliRunner()


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.setenv("TCPA_SEED", "7")
    for name in ("add.wat", "checked_index.wat"):
        (tmp_path / name).write_text(corpus_source(name), encoding="utf-8")
    (tmp_path / "props.txt").write_text(DEFAULT_PROPS_TEXT, encoding="utf-8")
    return tmp_path


def test_exit_code_mapping():
    assert exit_code_for(AddressInUse("x")) == 3
    assert exit_code_for(AttestationFailed(Stage.MEASUREMENT)) == 4
    assert exit_code_for(IcError(3)) == 7
    assert exit_code_for(TransportError("x")) == 6
    assert exit_code_for(ValueError("x")) == 2
    assert exit_code_for(RuntimeError("x")) is None


def test_assemble_count_and_run(runner, workdir):
    result = runner.invoke(cli, ["assemble", str(workdir / "add.wat")])
    assert result.exit_code == 0, result.output
    wasm = workdir / "add.wasm"
    assert wasm.read_bytes()[:4] == b"\x00asm"
    assert (workdir / "add.wasm.map").read_text().count("\n") == count_instructions(parse_module(wasm.read_bytes()))

    result = runner.invoke(cli, ["count", str(wasm)])
    assert result.output.strip() == str(count_instructions(parse_module(wasm.read_bytes())))

    result = runner.invoke(cli, ["run", str(wasm), "add", "2", "3"])
    assert result.exit_code == 0
    assert result.output.strip() == "returned 5"


def test_run_reports_traps_with_their_location(runner, workdir):
    result = runner.invoke(cli, ["run", str(workdir / "checked_index.wat"), "index", "12"])
    assert result.exit_code == EXIT_REJECTED
    assert result.output.startswith("trapped AssertFailed at offset ")
    assert result.output.strip().endswith("(11:5)")
    assert runner.invoke(cli, ["run", str(workdir / "checked_index.wat"), "index", "3"]).output.strip() == \
        "returned 3"


def test_bad_programs_are_usage_errors(runner, workdir):
    (workdir / "bad.wat").write_text("(module (func i32.const))")
    result = runner.invoke(cli, ["count", str(workdir / "bad.wat")])
    assert result.exit_code == EXIT_USAGE
    assert "error:" in result.output
    result = runner.invoke(cli, ["run", str(workdir / "add.wat"), "missing"])
    assert result.exit_code == EXIT_USAGE


def test_analyze(runner, workdir):
    result = runner.invoke(cli, ["analyze", str(workdir / "checked_index.wat"), "-p", str(workdir / "props.txt")])
    assert result.exit_code == 0, result.output
    assert result.output.startswith("eo=false\nproperties=2\n")
    assert "property.0.outcome=violated\n" in result.output
    assert "property.0.witness.location=11:5\n" in result.output
    assert "no-assert-failure: AssertFailed in index(arg0=" in result.output

    result = runner.invoke(cli, ["analyze", str(workdir / "add.wat"), "--bounds.max-paths", "4", "--solver.ms", "50"])
    assert result.exit_code == 0
    assert "property.0.outcome=valid\n" in result.output


def test_smt(runner, workdir):
    result = runner.invoke(cli, ["smt", str(workdir / "checked_index.wat")])
    assert result.exit_code == 0, result.output
    assert "(set-logic QF_BV)" in result.output
    assert "(check-sat)" in result.output
    assert runner.invoke(cli, ["smt", str(workdir / "add.wat")]).exit_code == EXIT_REJECTED


def test_keygen_and_registry(runner, workdir):
    for name in ("alice", "bob"):
        result = runner.invoke(cli, ["keygen", name, "--out-dir", str(workdir)])
        assert result.exit_code == 0, result.output
    assert oct((workdir / "alice.key").stat().st_mode & 0o777) == "0o600"
    assert len(bytes.fromhex((workdir / "alice.pub").read_text().strip())) == 32

    reg = str(workdir / "reg.tcpr")
    assert runner.invoke(cli, ["registry", "create", "-p", str(workdir / "props.txt"), "-o", reg]).exit_code == 0
    assert runner.invoke(cli, ["registry", "verify", reg]).exit_code == EXIT_REJECTED
    for role, name in (("provider", "alice"), ("consumer", "bob")):
        result = runner.invoke(cli, ["registry", "sign", reg, "--role", role, "--key", str(workdir / f"{name}.key")])
        assert result.exit_code == 0, result.output

    result = runner.invoke(cli, ["registry", "verify", reg, "--provider-pub", str(workdir / "alice.pub"),
                                 "--consumer-pub", str(workdir / "bob.pub")])
    assert (result.exit_code, result.output.strip()) == (0, "valid")
    result = runner.invoke(cli, ["registry", "verify", reg, "--consumer-pub", str(workdir / "alice.pub")])
    assert (result.exit_code, result.output.strip()) == (EXIT_REJECTED, "invalid")

    shown = runner.invoke(cli, ["registry", "show", reg]).output
    assert shown.startswith("no-assert-failure assertion_unreachable\nnever-traps no_trap\n")
    assert "# provider: " + (workdir / "alice.pub").read_text().strip() in shown


def test_ic_refuses_unreadable_images(runner, workdir):
    result = runner.invoke(cli, ["ic", "--listen", "127.0.0.1:0", "-p", str(workdir / "missing.props")])
    assert result.exit_code == EXIT_USAGE


def test_ic_reports_a_busy_port(runner, workdir):
    with socket.socket() as busy:
        busy.bind(("127.0.0.1", 0))
        busy.listen(1)
        port = busy.getsockname()[1]
        result = runner.invoke(cli, ["ic", "--listen", f"127.0.0.1:{port}", "-p", str(workdir / "props.txt"),
                                     "--data-dir", str(workdir)])
    assert result.exit_code == EXIT_ADDRESS_IN_USE
    assert "already in use" in result.output


@pytest.fixture
def ic_host(world, workdir):
    """A served IC whose images are also written to files for the CLI roles."""
    (workdir / "analyzer.yaml").write_bytes(world.x_code)
    (workdir / "builder.json").write_bytes(world.b_config)
    (workdir / "rot.pub").write_text(world.rot_pub.hex() + "\n")
    ic_id = world.load()
    ports = queue.Queue()
    thread = threading.Thread(target=serve_ic, args=(world.platform, ic_id, "127.0.0.1", 0),
                              kwargs={"on_ready": ports.put}, daemon=True)
    thread.start()
    yield ports.get(timeout=10)
    thread.join(timeout=30)


def _images(workdir) -> list[str]:
    return ["-x", str(workdir / "analyzer.yaml"), "-b", str(workdir / "builder.json"),
            "-p", str(workdir / "props.txt")]


@pytest.mark.slow
@pytest.mark.parametrize("program,accepted", [("add.wat", True), ("checked_index.wat", False)])
def test_provider_and_consumer(runner, workdir, ic_host, program, accepted):
    chain = workdir / "chain.tcpc"
    result = runner.invoke(cli, ["provider", "--connect", f"127.0.0.1:{ic_host}", *_images(workdir),
                                 "-s", str(workdir / program), "--rot", str(workdir / "rot.pub"),
                                 "-o", str(chain)])
    assert result.exit_code == 0, result.output
    assert "eo=true" in result.output

    result = runner.invoke(cli, ["consumer", *_images(workdir), "--chain", str(chain),
                                 "--rot", str(workdir / "rot.pub")])
    if accepted:
        assert (result.exit_code, result.output.strip()) == (0, "accepted")
    else:
        assert result.exit_code == EXIT_REJECTED
        assert result.output.startswith("rejected(step=report, PropertyNotValid)")


@pytest.mark.slow
def test_provider_with_the_wrong_root_of_trust(runner, workdir, ic_host, rng):
    (workdir / "other.pub").write_text(keygen(rng).public.hex() + "\n")
    result = runner.invoke(cli, ["provider", "--connect", f"127.0.0.1:{ic_host}", *_images(workdir),
                                 "-s", str(workdir / "add.wat"), "--rot", str(workdir / "other.pub"),
                                 "-o", str(workdir / "chain.tcpc")])
    assert result.exit_code == EXIT_ATTESTATION
    assert not (workdir / "chain.tcpc").exists()


def test_consumer_needs_one_chain_source(runner, workdir):
    result = runner.invoke(cli, ["consumer", "-p", str(workdir / "props.txt")])
    assert result.exit_code == EXIT_USAGE


def test_bench(runner, workdir, corpus):
    (workdir / "default.props").write_bytes((corpus / "default.props").read_bytes())
    out = workdir / "bench.txt"
    result = runner.invoke(cli, ["bench", str(workdir), "--mode", "plain", "--bounds.max-paths", "16",
                                 "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert "Time cost (s)" in result.output
    assert result.output.count("RECORD ") == 2
    assert out.read_text() == result.output

    result = runner.invoke(cli, ["bench", str(workdir), "--sweep-solver-ms", "20,200"])
    assert result.exit_code == 0, result.output
    assert len(result.output.splitlines()) == 4

    assert runner.invoke(cli, ["bench", str(workdir), "--sweep-solver-ms", "0"]).exit_code == EXIT_USAGE
