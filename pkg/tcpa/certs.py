"""Certificates of the attestation chain.

Every certificate file is::

    "TCPC" | version (1 byte) | kind (1 byte) | body | Ed25519 signature (64 bytes)

and the signature covers everything before it. Bodies are fixed sequences of
length-prefixed fields (see ``codec``):

- PC  (kind 1): plat_pub
- ICC (kind 2): m_ic, ic_pub
- CC  (kind 3): flags byte, then h_s, e, report. Flag bit 0 set means ``e``
  is the SHA-256 of the executable rather than the executable itself.
- OC  (kind 4): h_s, digest of e

A chain file (kind 0) is unsigned and holds the PC, ICC, CC and OC images as
four fields, the last one empty when there is no OC. Certificates inside a
chain are decoded lazily by ``verify_chain`` so that damage to any of them is
reported at the stage that checks it.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import ClassVar, Optional

from . import codec, security
from .report import AnalysisReport, Outcome, ReportError
from .security import KEY_LEN, SIGNATURE_LEN, CryptoError, KeyPair, MalformedKey, Measurement

logger = logging.getLogger(__name__)

MAGIC = b"TCPC"
VERSION = 1
HEADER_LEN = len(MAGIC) + 2

KIND_CHAIN = 0
KIND_PC = 1
KIND_ICC = 2
KIND_CC = 3
KIND_OC = 4

CC_DIGEST_ONLY = 0x01


class CertificateError(Exception):
    pass


class MalformedCertificate(CertificateError):
    pass


def _header(kind: int) -> bytes:
    return MAGIC + bytes([VERSION, kind])


def _open(blob: bytes, kind: int) -> tuple[bytes, bytes, bytes]:
    """Split a certificate image into (body, signed region, signature)."""
    if len(blob) < HEADER_LEN + SIGNATURE_LEN:
        raise MalformedCertificate("certificate too short")
    if blob[:4] != MAGIC:
        raise MalformedCertificate("bad certificate magic")
    if blob[4] != VERSION:
        raise MalformedCertificate(f"unsupported certificate version {blob[4]}")
    if blob[5] != kind:
        raise MalformedCertificate(f"expected certificate kind {kind}, found {blob[5]}")
    signed, signature = blob[:-SIGNATURE_LEN], blob[-SIGNATURE_LEN:]
    return signed[HEADER_LEN:], signed, signature


def _check_key(public: bytes, what: str) -> None:
    if len(public) != KEY_LEN:
        raise MalformedKey(f"{what} must be {KEY_LEN} bytes, got {len(public)}")


class _Certificate:
    KIND: ClassVar[int]
    signature: bytes

    def body(self) -> bytes:
        raise NotImplementedError

    @classmethod
    def _from_body(cls, body: bytes, signature: bytes):
        raise NotImplementedError

    def signed_bytes(self) -> bytes:
        return _header(self.KIND) + self.body()

    def encode(self) -> bytes:
        return self.signed_bytes() + self.signature

    @classmethod
    def decode(cls, blob: bytes):
        body, _, signature = _open(blob, cls.KIND)
        try:
            cert = cls._from_body(body, signature)
        except (codec.CodecError, ValueError) as e:
            raise MalformedCertificate(f"{cls.__name__}: {e}") from e
        if cert.encode() != blob:
            raise MalformedCertificate(f"{cls.__name__} is not canonically encoded")
        return cert

    def verify(self, public: bytes) -> bool:
        try:
            return security.verify(self.signature, self.signed_bytes(), public)
        except CryptoError as e:
            logger.debug(f"{type(self).__name__} verification error: {e}")
            return False


@dataclass(frozen=True)
class PlatformCertificate(_Certificate):
    KIND: ClassVar[int] = KIND_PC
    plat_pub: bytes
    signature: bytes = field(repr=False)

    def body(self) -> bytes:
        return codec.field(self.plat_pub)

    @classmethod
    def _from_body(cls, body: bytes, signature: bytes) -> "PlatformCertificate":
        (plat_pub,) = codec.split_fields(body, 1)
        return cls(plat_pub, signature)


@dataclass(frozen=True)
class IcCertificate(_Certificate):
    KIND: ClassVar[int] = KIND_ICC
    m_ic: Measurement
    ic_pub: bytes
    signature: bytes = field(repr=False)

    def body(self) -> bytes:
        return codec.fields([self.m_ic.digest, self.ic_pub])

    @classmethod
    def _from_body(cls, body: bytes, signature: bytes) -> "IcCertificate":
        m_ic, ic_pub = codec.split_fields(body, 2)
        return cls(Measurement(m_ic), ic_pub, signature)


@dataclass(frozen=True)
class ComplianceCertificate(_Certificate):
    KIND: ClassVar[int] = KIND_CC
    h_s: bytes
    # the executable, or its digest when digest_only
    e: bytes
    report_bytes: bytes
    digest_only: bool = False
    signature: bytes = field(default=b"", repr=False)

    def body(self) -> bytes:
        flags = CC_DIGEST_ONLY if self.digest_only else 0
        return bytes([flags]) + codec.fields([self.h_s, self.e, self.report_bytes])

    @classmethod
    def _from_body(cls, body: bytes, signature: bytes) -> "ComplianceCertificate":
        if not body:
            raise ValueError("empty body")
        flags = body[0]
        if flags & ~CC_DIGEST_ONLY:
            raise ValueError(f"unknown flags {flags:#x}")
        h_s, e, report = codec.split_fields(body[1:], 3)
        return cls(h_s, e, report, bool(flags & CC_DIGEST_ONLY), signature)

    @property
    def e_digest(self) -> bytes:
        return self.e if self.digest_only else security.hash(self.e)

    @property
    def executable(self) -> Optional[bytes]:
        return None if self.digest_only else self.e

    @property
    def report(self) -> AnalysisReport:
        return AnalysisReport.from_bytes(self.report_bytes)


@dataclass(frozen=True)
class OriginCertificate(_Certificate):
    KIND: ClassVar[int] = KIND_OC
    h_s: bytes
    e_digest: bytes
    signature: bytes = field(repr=False)

    def body(self) -> bytes:
        return codec.fields([self.h_s, self.e_digest])

    @classmethod
    def _from_body(cls, body: bytes, signature: bytes) -> "OriginCertificate":
        h_s, e_digest = codec.split_fields(body, 2)
        return cls(h_s, e_digest, signature)


# ---------------------------------------------------------------------------
# Issuance
# ---------------------------------------------------------------------------

def issue_pc(plat_pub: bytes, rot: KeyPair) -> PlatformCertificate:
    _check_key(plat_pub, "platform public key")
    unsigned = PlatformCertificate(plat_pub, b"")
    return PlatformCertificate(plat_pub, rot.sign(unsigned.signed_bytes()))


def issue_icc(m_ic: Measurement, ic_pub: bytes, plat: KeyPair) -> IcCertificate:
    _check_key(ic_pub, "IC public key")
    unsigned = IcCertificate(m_ic, ic_pub, b"")
    return IcCertificate(m_ic, ic_pub, plat.sign(unsigned.signed_bytes()))


def issue_cc(h_s: bytes, e: bytes, report: AnalysisReport, ic: KeyPair,
             digest_only: bool = False) -> ComplianceCertificate:
    """``e`` is always the full executable; ``digest_only`` stores its hash instead."""
    stored = security.hash(e) if digest_only else e
    unsigned = ComplianceCertificate(h_s, stored, report.to_bytes(), digest_only)
    return ComplianceCertificate(h_s, stored, report.to_bytes(), digest_only, ic.sign(unsigned.signed_bytes()))


def issue_oc(h_s: bytes, e_digest: bytes, a: KeyPair) -> OriginCertificate:
    unsigned = OriginCertificate(h_s, e_digest, b"")
    return OriginCertificate(h_s, e_digest, a.sign(unsigned.signed_bytes()))


# ---------------------------------------------------------------------------
# Chains
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CertificateChain:
    """Encoded PC, ICC, CC and optional OC images."""

    pc: bytes
    icc: bytes
    cc: bytes
    oc: Optional[bytes] = None

    @classmethod
    def of(cls, pc: PlatformCertificate, icc: IcCertificate, cc: ComplianceCertificate,
           oc: Optional[OriginCertificate] = None) -> "CertificateChain":
        return cls(pc.encode(), icc.encode(), cc.encode(), oc.encode() if oc is not None else None)

    def with_oc(self, oc: Optional[OriginCertificate]) -> "CertificateChain":
        return CertificateChain(self.pc, self.icc, self.cc, oc.encode() if oc is not None else None)

    def compliance(self) -> ComplianceCertificate:
        return ComplianceCertificate.decode(self.cc)

    def to_bytes(self) -> bytes:
        return _header(KIND_CHAIN) + codec.fields([self.pc, self.icc, self.cc, self.oc or b""])

    @classmethod
    def from_bytes(cls, data: bytes) -> "CertificateChain":
        if len(data) < HEADER_LEN or data[:4] != MAGIC:
            raise MalformedCertificate("not a certificate chain file")
        if data[4] != VERSION or data[5] != KIND_CHAIN:
            raise MalformedCertificate("unsupported chain version or kind")
        try:
            pc, icc, cc, oc = codec.split_fields(data[HEADER_LEN:], 4)
        except codec.CodecError as e:
            raise MalformedCertificate(f"chain body: {e}") from e
        return cls(pc, icc, cc, oc or None)


class Stage(str, Enum):
    PC_SIGNATURE = "pc_signature"
    ICC_SIGNATURE = "icc_signature"
    MEASUREMENT = "measurement"
    CC_SIGNATURE = "cc_signature"
    REPORT = "report"
    ORIGIN = "origin"


class Reason(str, Enum):
    BAD_SIGNATURE = "BadSignature"
    MALFORMED = "Malformed"
    MEASUREMENT_MISMATCH = "MeasurementMismatch"
    EXECUTABLE_MISMATCH = "ExecutableMismatch"
    PROPERTY_NOT_VALID = "PropertyNotValid"
    ORIGIN_MISMATCH = "OriginMismatch"
    ORIGIN_MISSING = "OriginMissing"


@dataclass(frozen=True)
class VerifyOutcome:
    accepted: bool
    step: Optional[Stage] = None
    reason: Optional[Reason] = None
    detail: str = ""

    @classmethod
    def reject(cls, step: Stage, reason: Reason, detail: str = "") -> "VerifyOutcome":
        return cls(False, step, reason, detail)

    def __bool__(self) -> bool:
        return self.accepted

    def __str__(self) -> str:
        if self.accepted:
            return "accepted"
        return f"rejected(step={self.step.value}, {self.reason.value})"


ACCEPTED = VerifyOutcome(True)


def verify_attestation(pc_blob: bytes, icc_blob: bytes, rot_pub: bytes,
                       m_exp: Measurement) -> tuple[VerifyOutcome, Optional[IcCertificate]]:
    """Stages pc_signature, icc_signature and measurement.

    On acceptance the ICC is returned so the caller can use ``ic_pub``.
    """
    try:
        pc = PlatformCertificate.decode(pc_blob)
    except CertificateError as e:
        return VerifyOutcome.reject(Stage.PC_SIGNATURE, Reason.MALFORMED, str(e)), None
    if not pc.verify(rot_pub):
        return VerifyOutcome.reject(Stage.PC_SIGNATURE, Reason.BAD_SIGNATURE), None

    try:
        icc = IcCertificate.decode(icc_blob)
    except CertificateError as e:
        return VerifyOutcome.reject(Stage.ICC_SIGNATURE, Reason.MALFORMED, str(e)), None
    if not icc.verify(pc.plat_pub):
        return VerifyOutcome.reject(Stage.ICC_SIGNATURE, Reason.BAD_SIGNATURE), None

    if icc.m_ic != m_exp:
        return VerifyOutcome.reject(Stage.MEASUREMENT, Reason.MEASUREMENT_MISMATCH,
                                    f"m_ic {icc.m_ic.hex()[:16]} != m_exp {m_exp.hex()[:16]}"), None
    return ACCEPTED, icc


def verify_chain(chain: CertificateChain, rot_pub: bytes, m_exp: Measurement,
                 require_all_valid: bool = True, a_pub: Optional[bytes] = None) -> VerifyOutcome:
    outcome = _verify_chain(chain, rot_pub, m_exp, require_all_valid, a_pub)
    logger.info(f"chain verification: {outcome}")
    return outcome


def _verify_chain(chain: CertificateChain, rot_pub: bytes, m_exp: Measurement,
                  require_all_valid: bool, a_pub: Optional[bytes]) -> VerifyOutcome:
    outcome, icc = verify_attestation(chain.pc, chain.icc, rot_pub, m_exp)
    if not outcome:
        return outcome

    try:
        cc = ComplianceCertificate.decode(chain.cc)
    except CertificateError as e:
        return VerifyOutcome.reject(Stage.CC_SIGNATURE, Reason.MALFORMED, str(e))
    if not cc.verify(icc.ic_pub):
        return VerifyOutcome.reject(Stage.CC_SIGNATURE, Reason.BAD_SIGNATURE)

    if require_all_valid:
        try:
            report = cc.report
        except ReportError as e:
            return VerifyOutcome.reject(Stage.REPORT, Reason.MALFORMED, str(e))
        if not report.eo:
            return VerifyOutcome.reject(Stage.REPORT, Reason.EXECUTABLE_MISMATCH)
        for p in report.property_outcomes:
            if p.outcome != Outcome.VALID:
                return VerifyOutcome.reject(Stage.REPORT, Reason.PROPERTY_NOT_VALID, f"{p.id}: {p.outcome.value}")

    if chain.oc is None:
        if a_pub is not None:
            return VerifyOutcome.reject(Stage.ORIGIN, Reason.ORIGIN_MISSING)
        return ACCEPTED
    try:
        oc = OriginCertificate.decode(chain.oc)
    except CertificateError as e:
        return VerifyOutcome.reject(Stage.ORIGIN, Reason.MALFORMED, str(e))
    if a_pub is not None and not oc.verify(a_pub):
        return VerifyOutcome.reject(Stage.ORIGIN, Reason.BAD_SIGNATURE)
    if oc.h_s != cc.h_s or oc.e_digest != cc.e_digest:
        return VerifyOutcome.reject(Stage.ORIGIN, Reason.ORIGIN_MISMATCH)
    return ACCEPTED
