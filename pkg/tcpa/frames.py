"""Wire frames exchanged by provider, consumer and the isolated computation.

Frame layout::

    "TCPA" | version (1 byte) | type (1 byte) | payload length (4 bytes, big-endian) | payload

Payloads are sequences of length-prefixed fields (``codec``). Unknown type
bytes are rejected, never skipped.
"""
from __future__ import annotations

import logging
import socket
from dataclasses import dataclass
from enum import IntEnum
from typing import ClassVar, Optional, Union

from . import codec
from .config import FRAME_CAP

logger = logging.getLogger(__name__)

MAGIC = b"TCPA"
VERSION = 1
HEADER_LEN = 10


class FrameError(Exception):
    pass


class BadMagic(FrameError):
    pass


class BadVersion(FrameError):
    pass


class UnknownType(FrameError):
    pass


class LengthMismatch(FrameError):
    pass


class Oversize(FrameError):
    pass


class MalformedPayload(FrameError):
    pass


class MsgType(IntEnum):
    HELLO = 1
    AGREE_PARAMS = 2
    REQUEST_ATTESTATION = 3
    ATTESTATION_RESPONSE = 4
    KEY_SHARE = 5
    SUBMIT_JOB = 6
    COMPLIANCE_RESULT = 7
    FORWARD = 8
    ERROR = 9


class ErrorCode(IntEnum):
    PROTOCOL_VIOLATION = 1
    AUTH_FAILURE = 2
    BUILD_FAILED = 3
    ANALYSIS_FAILED = 4
    ABORTED = 5
    INTERNAL = 6


@dataclass(frozen=True)
class Hello:
    TYPE: ClassVar[MsgType] = MsgType.HELLO
    session_id: str
    role: str

    def payload(self) -> bytes:
        return codec.text(self.session_id) + codec.text(self.role)

    @classmethod
    def parse(cls, r: codec.FieldReader) -> "Hello":
        return cls(r.text(), r.text())


@dataclass(frozen=True)
class AgreeParams:
    TYPE: ClassVar[MsgType] = MsgType.AGREE_PARAMS
    x_digest: bytes
    b_digest: bytes
    p_digest: bytes

    def payload(self) -> bytes:
        return codec.fields([self.x_digest, self.b_digest, self.p_digest])

    @classmethod
    def parse(cls, r: codec.FieldReader) -> "AgreeParams":
        return cls(r.field(), r.field(), r.field())


@dataclass(frozen=True)
class RequestAttestation:
    TYPE: ClassVar[MsgType] = MsgType.REQUEST_ATTESTATION

    def payload(self) -> bytes:
        return b""

    @classmethod
    def parse(cls, r: codec.FieldReader) -> "RequestAttestation":
        return cls()


@dataclass(frozen=True)
class AttestationResponse:
    TYPE: ClassVar[MsgType] = MsgType.ATTESTATION_RESPONSE
    pc: bytes
    icc: bytes

    def payload(self) -> bytes:
        return codec.fields([self.pc, self.icc])

    @classmethod
    def parse(cls, r: codec.FieldReader) -> "AttestationResponse":
        return cls(r.field(), r.field())


@dataclass(frozen=True)
class KeyShare:
    TYPE: ClassVar[MsgType] = MsgType.KEY_SHARE
    share: bytes
    # empty from the provider; the IC signs both shares
    signature: bytes = b""

    def payload(self) -> bytes:
        return codec.fields([self.share, self.signature])

    @classmethod
    def parse(cls, r: codec.FieldReader) -> "KeyShare":
        return cls(r.field(), r.field())


@dataclass(frozen=True)
class SubmitJob:
    TYPE: ClassVar[MsgType] = MsgType.SUBMIT_JOB
    s_t: bytes
    e: bytes

    def payload(self) -> bytes:
        return codec.fields([self.s_t, self.e])

    @classmethod
    def parse(cls, r: codec.FieldReader) -> "SubmitJob":
        return cls(r.field(), r.field())


@dataclass(frozen=True)
class ComplianceResult:
    TYPE: ClassVar[MsgType] = MsgType.COMPLIANCE_RESULT
    cc: bytes

    def payload(self) -> bytes:
        return codec.field(self.cc)

    @classmethod
    def parse(cls, r: codec.FieldReader) -> "ComplianceResult":
        return cls(r.field())


@dataclass(frozen=True)
class Forward:
    TYPE: ClassVar[MsgType] = MsgType.FORWARD
    pc: bytes
    icc: bytes
    cc: bytes
    oc: Optional[bytes] = None

    def payload(self) -> bytes:
        return codec.fields([self.pc, self.icc, self.cc, self.oc or b""])

    @classmethod
    def parse(cls, r: codec.FieldReader) -> "Forward":
        pc, icc, cc, oc = r.field(), r.field(), r.field(), r.field()
        return cls(pc, icc, cc, oc or None)


@dataclass(frozen=True)
class Error:
    TYPE: ClassVar[MsgType] = MsgType.ERROR
    code: int
    text: str = ""

    def payload(self) -> bytes:
        return codec.u32(self.code) + codec.text(self.text)

    @classmethod
    def parse(cls, r: codec.FieldReader) -> "Error":
        return cls(r.u32(), r.text())


Message = Union[Hello, AgreeParams, RequestAttestation, AttestationResponse, KeyShare,
                SubmitJob, ComplianceResult, Forward, Error]

_BY_TYPE = {cls.TYPE: cls for cls in (Hello, AgreeParams, RequestAttestation, AttestationResponse,
                                      KeyShare, SubmitJob, ComplianceResult, Forward, Error)}


def encode_frame(msg: Message) -> bytes:
    payload = msg.payload()
    return MAGIC + bytes([VERSION, msg.TYPE]) + codec.u32(len(payload)) + payload


def parse_header(header: bytes, cap: int = FRAME_CAP) -> tuple[MsgType, int]:
    """Validate a 10-byte header; returns (type, payload length)."""
    if len(header) < HEADER_LEN:
        raise LengthMismatch(f"frame header truncated ({len(header)} bytes)")
    if header[:4] != MAGIC:
        raise BadMagic(f"bad frame magic {header[:4]!r}")
    if header[4] != VERSION:
        raise BadVersion(f"unsupported frame version {header[4]}")
    try:
        kind = MsgType(header[5])
    except ValueError as e:
        raise UnknownType(f"unknown frame type {header[5]}") from e
    length = codec.U32.unpack(header[6:10])[0]
    if length > cap:
        raise Oversize(f"declared payload of {length} bytes exceeds cap of {cap}")
    return kind, length


def decode_payload(kind: MsgType, payload: bytes) -> Message:
    r = codec.FieldReader(payload)
    try:
        msg = _BY_TYPE[kind].parse(r)
        r.finish()
    except codec.CodecError as e:
        raise MalformedPayload(f"{kind.name}: {e}") from e
    return msg


def decode_frame(data: bytes, cap: int = FRAME_CAP) -> Message:
    kind, length = parse_header(data[:HEADER_LEN], cap)
    if len(data) - HEADER_LEN != length:
        raise LengthMismatch(f"declared {length} payload bytes, got {len(data) - HEADER_LEN}")
    return decode_payload(kind, data[HEADER_LEN:])


# ---------------------------------------------------------------------------
# Stream I/O
# ---------------------------------------------------------------------------

def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(min(n - len(buf), 1 << 16))
        if not chunk:
            raise ConnectionError("connection closed mid-frame" if buf else "connection closed")
        buf.extend(chunk)
    return bytes(buf)


def recv_frame(sock: socket.socket, cap: int = FRAME_CAP) -> tuple[Message, bytes]:
    """Read one frame; returns the message and its raw bytes."""
    header = _recv_exact(sock, HEADER_LEN)
    kind, length = parse_header(header, cap)
    payload = _recv_exact(sock, length) if length else b""
    return decode_payload(kind, payload), header + payload


def send_frame(sock: socket.socket, msg: Message) -> bytes:
    data = encode_frame(msg)
    sock.sendall(data)
    return data
