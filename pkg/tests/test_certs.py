from dataclasses import dataclass

import pytest

from tcpa import security
from tcpa.certs import (
    CertificateChain,
    ComplianceCertificate,
    IcCertificate,
    MalformedCertificate,
    PlatformCertificate,
    Reason,
    Stage,
    issue_cc,
    issue_icc,
    issue_oc,
    issue_pc,
    verify_attestation,
    verify_chain,
)
from tcpa.report import AnalysisReport, Outcome, PropertyOutcome
from tcpa.security import KeyPair, keygen, measure

VALID_REPORT = AnalysisReport(True, (PropertyOutcome("p", Outcome.VALID),))


@dataclass
class Keys:
    rot: KeyPair
    plat: KeyPair
    ic: KeyPair
    author: KeyPair
    stranger: KeyPair


@pytest.fixture
def keys(rng) -> Keys:
    return Keys(*(keygen(rng) for _ in range(5)))


M = measure(b"analyzer", b"builder", b"props")
H_S = security.hash(b"source")
E = b"\x00asm\x01\x00\x00\x00"


def _chain(keys: Keys, report: AnalysisReport = VALID_REPORT, *, pc_signer=None, icc_signer=None,
           cc_signer=None, m=M) -> CertificateChain:
    pc = issue_pc(keys.plat.public, pc_signer or keys.rot)
    icc = issue_icc(m, keys.ic.public, icc_signer or keys.plat)
    cc = issue_cc(H_S, E, report, cc_signer or keys.ic)
    return CertificateChain.of(pc, icc, cc)


def test_well_formed_chain_is_accepted(keys):
    outcome = verify_chain(_chain(keys), keys.rot.public, M)
    assert outcome
    assert str(outcome) == "accepted"


@pytest.mark.parametrize("case,stage,reason", [
    ("pc_signer", Stage.PC_SIGNATURE, Reason.BAD_SIGNATURE),
    ("icc_signer", Stage.ICC_SIGNATURE, Reason.BAD_SIGNATURE),
    ("measurement", Stage.MEASUREMENT, Reason.MEASUREMENT_MISMATCH),
    ("cc_signer", Stage.CC_SIGNATURE, Reason.BAD_SIGNATURE),
    ("eo", Stage.REPORT, Reason.EXECUTABLE_MISMATCH),
    ("unknown", Stage.REPORT, Reason.PROPERTY_NOT_VALID),
    ("violated", Stage.REPORT, Reason.PROPERTY_NOT_VALID),
])
def test_tampered_chains_are_rejected_at_the_right_stage(keys, case, stage, reason):
    if case == "pc_signer":
        chain = _chain(keys, pc_signer=keys.stranger)
    elif case == "icc_signer":
        chain = _chain(keys, icc_signer=keys.stranger)
    elif case == "measurement":
        chain = _chain(keys, m=measure(b"other analyzer", b"builder", b"props"))
    elif case == "cc_signer":
        chain = _chain(keys, cc_signer=keys.stranger)
    elif case == "eo":
        chain = _chain(keys, VALID_REPORT.with_eo(False))
    elif case == "unknown":
        chain = _chain(keys, AnalysisReport(True, (PropertyOutcome("p", Outcome.UNKNOWN, reason="loop-bound"),)))
    else:
        chain = _chain(keys, AnalysisReport(True, (PropertyOutcome("p", Outcome.VALID),
                                                   PropertyOutcome("q", Outcome.VIOLATED))))
    outcome = verify_chain(chain, keys.rot.public, M)
    assert not outcome
    assert (outcome.step, outcome.reason) == (stage, reason)
    assert str(outcome) == f"rejected(step={stage.value}, {reason.value})"


def test_unrequired_properties_skip_the_report_stage(keys):
    chain = _chain(keys, VALID_REPORT.with_eo(False))
    assert verify_chain(chain, keys.rot.public, M, require_all_valid=False)


def test_flipped_bytes_are_caught_by_the_owning_stage(keys):
    chain = _chain(keys)
    for field, stage in (("pc", Stage.PC_SIGNATURE), ("icc", Stage.ICC_SIGNATURE), ("cc", Stage.CC_SIGNATURE)):
        blob = bytearray(getattr(chain, field))
        blob[10] ^= 0x01
        damaged = CertificateChain(**{**chain.__dict__, field: bytes(blob)})
        outcome = verify_chain(damaged, keys.rot.public, M)
        assert not outcome
        assert outcome.step == stage
        assert outcome.reason in (Reason.BAD_SIGNATURE, Reason.MALFORMED)


def test_origin_certificate(keys):
    chain = _chain(keys)
    cc = chain.compliance()
    oc = issue_oc(H_S, cc.e_digest, keys.author)
    assert verify_chain(chain.with_oc(oc), keys.rot.public, M, a_pub=keys.author.public)
    # without a pinned author key the origin is only matched
    assert verify_chain(chain.with_oc(oc), keys.rot.public, M)

    missing = verify_chain(chain, keys.rot.public, M, a_pub=keys.author.public)
    assert (missing.step, missing.reason) == (Stage.ORIGIN, Reason.ORIGIN_MISSING)

    forged = issue_oc(H_S, cc.e_digest, keys.stranger)
    bad = verify_chain(chain.with_oc(forged), keys.rot.public, M, a_pub=keys.author.public)
    assert (bad.step, bad.reason) == (Stage.ORIGIN, Reason.BAD_SIGNATURE)

    other = issue_oc(H_S, security.hash(b"another executable"), keys.author)
    mismatch = verify_chain(chain.with_oc(other), keys.rot.public, M, a_pub=keys.author.public)
    assert (mismatch.step, mismatch.reason) == (Stage.ORIGIN, Reason.ORIGIN_MISMATCH)


def test_attestation_returns_the_ic_certificate(keys):
    chain = _chain(keys)
    outcome, icc = verify_attestation(chain.pc, chain.icc, keys.rot.public, M)
    assert outcome
    assert icc.ic_pub == keys.ic.public
    outcome, icc = verify_attestation(chain.pc, chain.icc, keys.stranger.public, M)
    assert icc is None and outcome.step == Stage.PC_SIGNATURE


def test_encodings_are_canonical(keys):
    chain = _chain(keys)
    assert CertificateChain.from_bytes(chain.to_bytes()) == chain
    pc = PlatformCertificate.decode(chain.pc)
    assert pc.encode() == chain.pc
    assert IcCertificate.decode(chain.icc).m_ic == M
    with pytest.raises(MalformedCertificate):
        PlatformCertificate.decode(chain.pc + b"\x00")
    with pytest.raises(MalformedCertificate):
        IcCertificate.decode(chain.pc)
    with pytest.raises(MalformedCertificate):
        CertificateChain.from_bytes(b"XXXX" + chain.to_bytes()[4:])
    with pytest.raises(MalformedCertificate):
        PlatformCertificate.decode(b"TCPC")


def test_compliance_certificate_contents(keys):
    full = issue_cc(H_S, E, VALID_REPORT, keys.ic)
    assert full.executable == E
    assert full.e_digest == security.hash(E)
    assert full.report == VALID_REPORT
    assert full.verify(keys.ic.public)
    assert not full.verify(keys.stranger.public)

    digest = issue_cc(H_S, E, VALID_REPORT, keys.ic, digest_only=True)
    assert digest.executable is None
    assert digest.e_digest == full.e_digest
    assert ComplianceCertificate.decode(digest.encode()) == digest
