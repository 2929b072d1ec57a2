"""Provider and consumer actors and the transports that connect them.

Message order of one honest session::

    provider -> IC   Hello, AgreeParams, RequestAttestation, KeyShare, SubmitJob
    IC -> provider   Hello, AgreeParams, AttestationResponse, KeyShare, ComplianceResult
    provider -> consumer   Forward

The IC answers every request with exactly one frame, so transports are
request/response. Any verification failure aborts the actor for good.
"""
from __future__ import annotations

import errno
import logging
import socket
import uuid
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from . import frames, security
from .certs import (
    CertificateChain,
    CertificateError,
    ComplianceCertificate,
    OriginCertificate,
    Reason,
    Stage,
    VerifyOutcome,
    issue_oc,
    verify_attestation,
    verify_chain,
)
from .config import FRAME_CAP
from .frames import ErrorCode, FrameError, Message
from .security import CryptoError, KeyPair, Randomness
from .tee import Platform

logger = logging.getLogger(__name__)


class ProtocolError(Exception):
    pass


class AttestationFailed(ProtocolError):
    def __init__(self, step: Stage, reason: Optional[Reason] = None, detail: str = ""):
        super().__init__(f"attestation failed at {step.value}" + (f" ({reason.value})" if reason else "")
                         + (f": {detail}" if detail else ""))
        self.step = step
        self.reason = reason


class NegotiationFailed(ProtocolError):
    pass


class TransportError(ProtocolError):
    pass


class AddressInUse(TransportError):
    pass


class UnexpectedMessage(TransportError):
    pass


class IcError(ProtocolError):
    def __init__(self, code: int, text: str = ""):
        super().__init__(f"IC error {code}: {text}")
        self.code = code
        self.text = text


class Aborted(ProtocolError):
    pass


# ---------------------------------------------------------------------------
# Transports
# ---------------------------------------------------------------------------

class Channel:
    """Request/response link to an IC host; ``transcript`` holds every byte it carried."""

    def __init__(self) -> None:
        self.transcript = bytearray()

    def exchange(self, msg: Message) -> Message:
        raise NotImplementedError

    def send(self, msg: Message) -> None:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __enter__(self) -> "Channel":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class LocalChannel(Channel):
    """In-process transport; frames are still encoded and decoded."""

    def __init__(self, platform: Platform, ic_id: str, cap: int = FRAME_CAP):
        super().__init__()
        self.platform = platform
        self.ic_id = ic_id
        self.cap = cap

    def _deliver(self, msg: Message) -> list[Message]:
        data = frames.encode_frame(msg)
        self.transcript += data
        replies = self.platform.handle(self.ic_id, frames.decode_frame(data, self.cap))
        out = []
        for reply in replies:
            raw = frames.encode_frame(reply)
            self.transcript += raw
            out.append(frames.decode_frame(raw, self.cap))
        return out

    def exchange(self, msg: Message) -> Message:
        replies = self._deliver(msg)
        if len(replies) != 1:
            raise TransportError(f"expected one reply, got {len(replies)}")
        return replies[0]

    def send(self, msg: Message) -> None:
        self._deliver(msg)


class SocketChannel(Channel):
    def __init__(self, host: str, port: int, timeout: float = 60.0, cap: int = FRAME_CAP):
        super().__init__()
        self.cap = cap
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as e:
            raise TransportError(f"cannot connect to {host}:{port}: {e}") from e

    def send(self, msg: Message) -> None:
        try:
            self.transcript += frames.send_frame(self.sock, msg)
        except OSError as e:
            raise TransportError(f"send failed: {e}") from e

    def exchange(self, msg: Message) -> Message:
        self.send(msg)
        try:
            reply, raw = frames.recv_frame(self.sock, self.cap)
        except (FrameError, ConnectionError, OSError) as e:
            raise TransportError(f"receive failed: {e}") from e
        self.transcript += raw
        return reply

    def close(self) -> None:
        self.sock.close()


def _listen(host: str, port: int) -> socket.socket:
    server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        server.bind((host, port))
    except OSError as e:
        server.close()
        if e.errno == errno.EADDRINUSE:
            raise AddressInUse(f"{host}:{port} is already in use") from e
        raise TransportError(f"cannot listen on {host}:{port}: {e}") from e
    server.listen(1)
    return server


_FINAL = (frames.ComplianceResult, frames.Error)


def serve_ic(platform: Platform, ic_id: str, host: str, port: int, sessions: int = 1,
             on_ready: Optional[Callable[[int], None]] = None,
             transcript: Optional[bytearray] = None, cap: int = FRAME_CAP) -> None:
    """Serve protocol frames for one loaded IC until ``sessions`` connections finished.

    ``on_ready`` receives the bound port, which matters when ``port`` is 0.
    """
    server = _listen(host, port)
    try:
        if on_ready is not None:
            on_ready(server.getsockname()[1])
        for _ in range(sessions):
            conn, peer = server.accept()
            logger.info(f"IC session from {peer[0]}:{peer[1]}")
            with conn:
                _serve_session(platform, ic_id, conn, transcript, cap)
    finally:
        server.close()


def _serve_session(platform: Platform, ic_id: str, conn: socket.socket,
                   transcript: Optional[bytearray], cap: int) -> None:
    while True:
        try:
            msg, raw = frames.recv_frame(conn, cap)
        except ConnectionError:
            return
        except FrameError as e:
            logger.warning(f"rejecting frame: {e}")
            frames.send_frame(conn, frames.Error(ErrorCode.PROTOCOL_VIOLATION, str(e)))
            return
        if transcript is not None:
            transcript += raw
        if isinstance(msg, frames.Error):
            logger.info(f"peer aborted the session: {msg.text}")
            return
        for reply in platform.handle(ic_id, msg):
            data = frames.send_frame(conn, reply)
            if transcript is not None:
                transcript += data
            if isinstance(reply, _FINAL):
                return


def send_forward(chain: CertificateChain, host: str, port: int, timeout: float = 60.0) -> bytes:
    try:
        with socket.create_connection((host, port), timeout=timeout) as sock:
            return frames.send_frame(sock, frames.Forward(chain.pc, chain.icc, chain.cc, chain.oc))
    except OSError as e:
        raise TransportError(f"cannot forward to {host}:{port}: {e}") from e


def receive_forward(host: str, port: int, on_ready: Optional[Callable[[int], None]] = None,
                    cap: int = FRAME_CAP) -> CertificateChain:
    server = _listen(host, port)
    try:
        if on_ready is not None:
            on_ready(server.getsockname()[1])
        conn, _ = server.accept()
        with conn:
            try:
                msg, _ = frames.recv_frame(conn, cap)
            except (FrameError, ConnectionError) as e:
                raise TransportError(f"bad forward frame: {e}") from e
    finally:
        server.close()
    if not isinstance(msg, frames.Forward):
        raise UnexpectedMessage(f"expected Forward, got {msg.TYPE.name}")
    return CertificateChain(msg.pc, msg.icc, msg.cc, msg.oc)


# ---------------------------------------------------------------------------
# Actors
# ---------------------------------------------------------------------------

class Phase(str, Enum):
    INIT = "init"
    ATTESTING = "attesting"
    NEGOTIATED = "negotiated"
    SUBMITTED = "submitted"
    DONE = "done"
    ABORTED = "aborted"


@dataclass(frozen=True)
class ProviderOutcome:
    pc: bytes
    icc: bytes
    cc: ComplianceCertificate
    oc: Optional[OriginCertificate] = None

    @property
    def chain(self) -> CertificateChain:
        return CertificateChain(self.pc, self.icc, self.cc.encode(), self.oc.encode() if self.oc else None)


@dataclass
class ProviderState:
    phase: Phase = Phase.INIT
    pc: Optional[bytes] = None
    icc: Optional[bytes] = None
    cc: Optional[ComplianceCertificate] = None
    # holds the session key only between negotiation and submission
    session_key: Optional[bytes] = field(default=None, repr=False)


class Provider:
    """Alice: attests the IC, hands it S under the session key, collects the CC."""

    def __init__(self, channel: Channel, rot_pub: bytes, x_code: bytes, b_config: bytes, p_props: bytes,
                 source: bytes, executable: bytes, a_keypair: Optional[KeyPair] = None,
                 rng: Optional[Randomness] = None, session_id: Optional[str] = None):
        self.channel = channel
        self.rot_pub = rot_pub
        self.x_code = x_code
        self.b_config = b_config
        self.p_props = p_props
        self.source = source
        self.executable = executable
        self.a_keypair = a_keypair
        self.rng = rng
        self.session_id = session_id or (rng.bytes(16).hex() if rng is not None else uuid.uuid4().hex)
        self.state = ProviderState()

    @property
    def phase(self) -> Phase:
        return self.state.phase

    def _expect(self, reply: Message, cls: type) -> Message:
        if isinstance(reply, frames.Error):
            raise IcError(reply.code, reply.text)
        if not isinstance(reply, cls):
            raise UnexpectedMessage(f"expected {cls.__name__}, got {reply.TYPE.name}")
        return reply

    def _abort(self, error: ProtocolError) -> None:
        self.state = ProviderState(Phase.ABORTED)
        logger.warning(f"provider aborted: {error}")
        if not isinstance(error, (IcError, TransportError)):
            try:
                self.channel.send(frames.Error(ErrorCode.ABORTED, type(error).__name__))
            except ProtocolError:
                pass

    def run(self) -> ProviderOutcome:
        if self.state.phase != Phase.INIT:
            raise Aborted(f"provider session is {self.state.phase.value}")
        try:
            return self._run()
        except ProtocolError as e:
            self._abort(e)
            raise

    def _run(self) -> ProviderOutcome:
        st, ch = self.state, self.channel

        hello = self._expect(ch.exchange(frames.Hello(self.session_id, "provider")), frames.Hello)
        if hello.session_id != self.session_id:
            raise UnexpectedMessage("IC answered for another session")
        agreed = self._expect(ch.exchange(frames.AgreeParams(
            security.hash(self.x_code), security.hash(self.b_config), security.hash(self.p_props))),
            frames.AgreeParams)
        if (agreed.x_digest, agreed.b_digest, agreed.p_digest) != (
                security.hash(self.x_code), security.hash(self.b_config), security.hash(self.p_props)):
            logger.warning("IC host reports different parameters; attestation will decide")

        st.phase = Phase.ATTESTING
        att = self._expect(ch.exchange(frames.RequestAttestation()), frames.AttestationResponse)
        m_exp = security.measure(self.x_code, self.b_config, self.p_props)
        outcome, icc = verify_attestation(att.pc, att.icc, self.rot_pub, m_exp)
        if not outcome:
            raise AttestationFailed(outcome.step, outcome.reason, outcome.detail)
        st.pc, st.icc = att.pc, att.icc
        logger.info(f"attestation verified, measurement {m_exp.hex()[:16]}")

        share_pub, share_priv = security.dh_keypair(self.rng)
        reply = self._expect(ch.exchange(frames.KeyShare(share_pub)), frames.KeyShare)
        try:
            signed = security.verify(reply.signature, reply.share + share_pub, icc.ic_pub)
        except CryptoError as e:
            raise NegotiationFailed(f"unusable key-share signature: {e}") from e
        if not signed:
            raise NegotiationFailed("IC key share is not signed by the attested IC key")
        try:
            st.session_key = security.dh_shared(share_priv, reply.share)
        except CryptoError as e:
            raise NegotiationFailed(str(e)) from e
        st.phase = Phase.NEGOTIATED

        s_t = security.sym_encrypt(st.session_key, self.source, self.rng)
        st.session_key = None
        st.phase = Phase.SUBMITTED
        result = self._expect(ch.exchange(frames.SubmitJob(s_t, self.executable)), frames.ComplianceResult)
        try:
            cc = ComplianceCertificate.decode(result.cc)
        except CertificateError as e:
            raise AttestationFailed(Stage.CC_SIGNATURE, Reason.MALFORMED, str(e)) from e
        if not cc.verify(icc.ic_pub):
            raise AttestationFailed(Stage.CC_SIGNATURE, Reason.BAD_SIGNATURE)
        h_s = security.hash(self.source)
        if cc.h_s != h_s:
            raise AttestationFailed(Stage.CC_SIGNATURE, Reason.MALFORMED, "CC describes another source")
        st.cc = cc

        oc = issue_oc(h_s, security.hash(self.executable), self.a_keypair) if self.a_keypair else None
        st.phase = Phase.DONE
        logger.info(f"compliance certificate received: eo={cc.report.eo}, {cc.report.verdicts()}")
        return ProviderOutcome(att.pc, att.icc, cc, oc)


def provider_run(endpoint: Channel, rot_pub: bytes, x_code: bytes, b_config: bytes, p_props: bytes,
                 source: bytes, executable: bytes, a_keypair: Optional[KeyPair] = None,
                 rng: Optional[Randomness] = None) -> ProviderOutcome:
    return Provider(endpoint, rot_pub, x_code, b_config, p_props, source, executable, a_keypair, rng).run()


@dataclass
class ConsumerState:
    phase: Phase = Phase.INIT
    chain: Optional[CertificateChain] = None
    outcome: Optional[VerifyOutcome] = None


class Consumer:
    """Bob: accepts a forwarded chain only if every check passes."""

    def __init__(self, rot_pub: bytes, x_code: bytes, b_config: bytes, p_props: bytes,
                 a_pub: Optional[bytes] = None):
        self.rot_pub = rot_pub
        self.m_exp = security.measure(x_code, b_config, p_props)
        self.a_pub = a_pub
        self.state = ConsumerState()

    def verify(self, chain: CertificateChain) -> VerifyOutcome:
        if self.state.phase != Phase.INIT:
            raise Aborted(f"consumer session is {self.state.phase.value}")
        self.state.phase = Phase.ATTESTING
        outcome = verify_chain(chain, self.rot_pub, self.m_exp, require_all_valid=True, a_pub=self.a_pub)
        self.state = ConsumerState(Phase.DONE if outcome else Phase.ABORTED, chain, outcome)
        return outcome


def consumer_verify(chain: CertificateChain, rot_pub: bytes, x_code: bytes, b_config: bytes, p_props: bytes,
                    a_pub: Optional[bytes] = None) -> VerifyOutcome:
    return Consumer(rot_pub, x_code, b_config, p_props, a_pub).verify(chain)
