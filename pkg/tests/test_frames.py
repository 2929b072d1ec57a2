import socket

import pytest

from tcpa import codec
from tcpa.frames import (
    HEADER_LEN,
    MAGIC,
    AgreeParams,
    AttestationResponse,
    BadMagic,
    BadVersion,
    ComplianceResult,
    Error,
    ErrorCode,
    Forward,
    Hello,
    KeyShare,
    LengthMismatch,
    MalformedPayload,
    MsgType,
    Oversize,
    RequestAttestation,
    SubmitJob,
    UnknownType,
    decode_frame,
    encode_frame,
    parse_header,
    recv_frame,
    send_frame,
)

MESSAGES = [
    Hello("session-1", "provider"),
    AgreeParams(b"\x01" * 32, b"\x02" * 32, b"\x03" * 32),
    RequestAttestation(),
    AttestationResponse(b"pc-bytes", b"icc-bytes"),
    KeyShare(b"\x09" * 32),
    KeyShare(b"\x09" * 32, b"\x07" * 64),
    SubmitJob(b"ciphertext", b"\x00asm\x01\x00\x00\x00"),
    ComplianceResult(b"cc"),
    Forward(b"pc", b"icc", b"cc"),
    Forward(b"pc", b"icc", b"cc", b"oc"),
    Error(ErrorCode.AUTH_FAILURE, "ciphertext failed authentication"),
]


@pytest.mark.parametrize("msg", MESSAGES, ids=lambda m: type(m).__name__)
def test_every_message_decodes_to_itself(msg):
    data = encode_frame(msg)
    assert data[:4] == MAGIC
    assert data[5] == msg.TYPE
    assert decode_frame(data) == msg


def test_header_layout():
    data = encode_frame(ComplianceResult(b"abc"))
    assert data[:HEADER_LEN] == b"TCPA\x01\x07" + (7).to_bytes(4, "big")
    assert parse_header(data[:HEADER_LEN]) == (MsgType.COMPLIANCE_RESULT, 7)


def _frame(magic=MAGIC, version=1, kind=MsgType.HELLO, payload=b"", length=None) -> bytes:
    length = len(payload) if length is None else length
    return magic + bytes([version, kind]) + length.to_bytes(4, "big") + payload


@pytest.mark.parametrize("data,error", [
    (_frame(magic=b"TCPB"), BadMagic),
    (_frame(version=2), BadVersion),
    (_frame(kind=0), UnknownType),
    (_frame(kind=10), UnknownType),
    (_frame(payload=codec.text("a") + codec.text("b"), length=3), LengthMismatch),
    (b"TCPA\x01", LengthMismatch),
    (_frame(length=0xFFFFFFFF), Oversize),
    (_frame(payload=codec.text("only one field")), MalformedPayload),
    (_frame(kind=MsgType.REQUEST_ATTESTATION, payload=b"\x00"), MalformedPayload),
    (_frame(kind=MsgType.HELLO, payload=codec.text("a") + codec.text("b") + b"x"), MalformedPayload),
])
def test_bad_frames_are_rejected(data, error):
    with pytest.raises(error):
        decode_frame(data)


def test_cap_is_configurable():
    data = encode_frame(SubmitJob(b"x" * 100, b""))
    with pytest.raises(Oversize):
        decode_frame(data, cap=50)
    assert decode_frame(data, cap=200) == SubmitJob(b"x" * 100, b"")


def test_stream_roundtrip_over_a_socket_pair():
    left, right = socket.socketpair()
    with left, right:
        sent = send_frame(left, Hello("s", "consumer"))
        msg, raw = recv_frame(right)
        assert msg == Hello("s", "consumer")
        assert raw == sent

        # oversize is refused from the header alone
        left.sendall(_frame(length=0xFFFFFFF0))
        with pytest.raises(Oversize):
            recv_frame(right, cap=1024)


def test_closed_stream_reports_connection_error():
    left, right = socket.socketpair()
    with right:
        left.sendall(encode_frame(Hello("s", "p"))[:5])
        left.close()
        with pytest.raises(ConnectionError):
            recv_frame(right)
