import pickle

import pytest

from tcpa import frames, security, tee
from tcpa.certs import ComplianceCertificate, IcCertificate, verify_attestation
from tcpa.frames import ErrorCode
from tcpa.report import Outcome
from tcpa.tee import EmptyImage, IcPhase, UnknownIc, ic_handle_message


def _one(world, ic_id, msg):
    replies = ic_handle_message(world.platform, ic_id, msg)
    assert len(replies) == 1
    return replies[0]


def _negotiate(world, ic_id) -> bytes:
    """Greet the IC and agree a session key with it."""
    _one(world, ic_id, frames.Hello("s1", "provider"))
    share_pub, share_priv = security.dh_keypair(world.rng)
    reply = _one(world, ic_id, frames.KeyShare(share_pub))
    assert isinstance(reply, frames.KeyShare)
    return security.dh_shared(share_priv, reply.share)


@pytest.mark.parametrize("index", [0, 1, 2])
def test_empty_images_cannot_be_loaded(world, index):
    images = list(world.images)
    images[index] = b""
    with pytest.raises(EmptyImage):
        world.platform.load(*images)


def test_unknown_ic(world):
    with pytest.raises(UnknownIc):
        world.platform.info("nope")
    with pytest.raises(UnknownIc):
        ic_handle_message(world.platform, "nope", frames.RequestAttestation())


def test_loaded_ic_attests_to_its_measurement(world):
    ic_id = world.load()
    info = world.platform.info(ic_id)
    assert info.phase == IcPhase.READY
    assert info.m_ic == security.measure(*world.images)

    att = _one(world, ic_id, frames.RequestAttestation())
    outcome, icc = verify_attestation(att.pc, att.icc, world.rot_pub, info.m_ic)
    assert outcome
    assert icc.ic_pub == info.ic_pub
    assert IcCertificate.decode(att.icc).m_ic == info.m_ic


def test_each_load_gets_fresh_keys(world):
    first, second = world.load(), world.load()
    assert first != second
    assert world.platform.info(first).ic_pub != world.platform.info(second).ic_pub
    assert world.platform.info(first).m_ic == world.platform.info(second).m_ic


def test_hello_and_agree_params(world):
    ic_id = world.load()
    assert _one(world, ic_id, frames.Hello("s1", "provider")) == frames.Hello("s1", "ic")
    reply = _one(world, ic_id, frames.AgreeParams(b"\x00" * 32, b"\x00" * 32, b"\x00" * 32))
    assert reply == frames.AgreeParams(*(security.hash(image) for image in world.images))
    assert world.platform.info(ic_id).phase == IcPhase.GREETED


def test_key_share_is_signed_by_the_ic_key(world):
    ic_id = world.load()
    _one(world, ic_id, frames.Hello("s1", "provider"))
    share_pub, _ = security.dh_keypair(world.rng)
    reply = _one(world, ic_id, frames.KeyShare(share_pub))
    ic_pub = world.platform.info(ic_id).ic_pub
    assert security.verify(reply.signature, reply.share + share_pub, ic_pub)
    assert world.platform.info(ic_id).phase == IcPhase.NEGOTIATED


@pytest.mark.parametrize("msg", [
    frames.KeyShare(b"\x09" * 32),
    frames.SubmitJob(b"x", b"y"),
    frames.AgreeParams(b"a", b"b", b"c"),
    frames.ComplianceResult(b"cc"),
])
def test_out_of_order_messages_fail_the_ic(world, msg):
    ic_id = world.load()
    reply = _one(world, ic_id, msg)
    assert isinstance(reply, frames.Error)
    assert reply.code == ErrorCode.PROTOCOL_VIOLATION
    assert world.platform.info(ic_id).phase == IcPhase.FAILED
    # a failed IC answers nothing else, attestation included
    assert isinstance(_one(world, ic_id, frames.RequestAttestation()), frames.Error)


def test_second_hello_is_a_violation(world):
    ic_id = world.load()
    _one(world, ic_id, frames.Hello("s1", "provider"))
    assert isinstance(_one(world, ic_id, frames.Hello("s2", "provider")), frames.Error)


def test_attestation_may_be_repeated_until_done(world):
    ic_id = world.load()
    first = _one(world, ic_id, frames.RequestAttestation())
    _one(world, ic_id, frames.Hello("s1", "provider"))
    assert _one(world, ic_id, frames.RequestAttestation()) == first
    share_pub, _ = security.dh_keypair(world.rng)
    _one(world, ic_id, frames.KeyShare(share_pub))
    assert _one(world, ic_id, frames.RequestAttestation()) == first


def test_full_job_returns_a_signed_certificate(world):
    ic_id = world.load()
    key = _negotiate(world, ic_id)
    source, executable = world.program("checked_index.wat")
    reply = _one(world, ic_id, frames.SubmitJob(security.sym_encrypt(key, source, world.rng), executable))
    assert isinstance(reply, frames.ComplianceResult)

    cc = ComplianceCertificate.decode(reply.cc)
    assert cc.verify(world.platform.info(ic_id).ic_pub)
    assert cc.h_s == security.hash(source)
    assert cc.executable == executable
    assert cc.report.eo
    assert cc.report.outcome("no-assert-failure").outcome == Outcome.VIOLATED
    assert world.platform.info(ic_id).phase == IcPhase.DONE

    # the IC is single-use
    assert isinstance(_one(world, ic_id, frames.SubmitJob(b"x", executable)), frames.Error)
    assert world.platform.info(ic_id).phase == IcPhase.DONE


def test_foreign_executable_is_flagged(world):
    ic_id = world.load()
    key = _negotiate(world, ic_id)
    source, _ = world.program("add.wat")
    _, other = world.program("clamp.wat")
    reply = _one(world, ic_id, frames.SubmitJob(security.sym_encrypt(key, source, world.rng), other))
    cc = ComplianceCertificate.decode(reply.cc)
    assert not cc.report.eo
    assert cc.executable == other


def test_digest_only_certificate(world):
    ic_id = world.load(digest_only=True)
    key = _negotiate(world, ic_id)
    source, executable = world.program("add.wat")
    reply = _one(world, ic_id, frames.SubmitJob(security.sym_encrypt(key, source, world.rng), executable))
    cc = ComplianceCertificate.decode(reply.cc)
    assert cc.executable is None
    assert cc.e_digest == security.hash(executable)


def test_bad_ciphertext_is_an_auth_failure(world):
    ic_id = world.load()
    _negotiate(world, ic_id)
    source, executable = world.program("add.wat")
    sealed = security.sym_encrypt(world.rng.bytes(32), source, world.rng)
    reply = _one(world, ic_id, frames.SubmitJob(sealed, executable))
    assert reply.code == ErrorCode.AUTH_FAILURE
    assert world.platform.info(ic_id).phase == IcPhase.FAILED


def test_unbuildable_source_reports_only_a_position(world):
    ic_id = world.load()
    key = _negotiate(world, ic_id)
    source = b"(module\n  (func (export \"f\")\n    secret_opcode))\n"
    reply = _one(world, ic_id, frames.SubmitJob(security.sym_encrypt(key, source, world.rng), b""))
    assert reply.code == ErrorCode.BUILD_FAILED
    assert "secret_opcode" not in reply.text


def test_small_order_share_is_refused(world):
    ic_id = world.load()
    _one(world, ic_id, frames.Hello("s1", "provider"))
    reply = _one(world, ic_id, frames.KeyShare(bytes(32)))
    assert reply.code == ErrorCode.AUTH_FAILURE


def test_secrets_cannot_be_serialized(world):
    ic_id = world.load()
    for obj in (world.manufacturer, world.platform, world.platform._ic(ic_id)):
        with pytest.raises(TypeError):
            pickle.dumps(obj)


@pytest.mark.parametrize("source", [
    b"(module\n  (func (export \"f\") (result i32)\n    i32.add))\n",
    b"(module\n  (func (export \"f\") (result i64)\n    i32.const 1\n    i64.const 2\n    i64.add))\n",
])
def test_ill_typed_source_is_a_build_failure(world, source):
    ic_id = world.load()
    key = _negotiate(world, ic_id)
    reply = _one(world, ic_id, frames.SubmitJob(security.sym_encrypt(key, source, world.rng), b""))
    assert isinstance(reply, frames.Error)
    assert reply.code == ErrorCode.BUILD_FAILED
    assert world.platform.info(ic_id).phase == IcPhase.FAILED


def test_analyser_crash_becomes_an_analysis_failure(world, monkeypatch):
    def crash(analysis, bounds):
        raise IndexError("pop from empty list")

    monkeypatch.setattr(tee, "explore", crash)
    ic_id = world.load()
    key = _negotiate(world, ic_id)
    source, executable = world.program("add.wat")
    reply = _one(world, ic_id, frames.SubmitJob(security.sym_encrypt(key, source, world.rng), executable))
    assert isinstance(reply, frames.Error)
    assert reply.code == ErrorCode.ANALYSIS_FAILED
    assert reply.text.endswith("analysis failed: IndexError")
    assert world.platform.info(ic_id).phase == IcPhase.FAILED
