"""Software simulation of a trusted execution environment.

NOT A SECURITY BOUNDARY. Keys are ordinary process memory; the isolation
enforced here is an API discipline: hosts talk to an isolated computation
only through ``ic_handle_message`` and can read nothing but its measurement
and public key.
"""
from __future__ import annotations

import logging
import threading
import uuid
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from . import frames, security
from .binary import parse_module
from .build_check import BuildFailed, check_build
from .certs import IcCertificate, PlatformCertificate, issue_cc, issue_icc, issue_pc
from .frames import ErrorCode, Message
from .models import AnalyzerConfig, BuilderConfig, ConfigError
from .properties import PropertyError, PropertySet
from .security import AuthFailure, CryptoError, Measurement, Randomness
from .symexec import SymexecError, explore, init_analysis
from .wasm import WasmError

logger = logging.getLogger(__name__)


class TeeError(Exception):
    pass


class EmptyImage(TeeError):
    pass


class UnknownIc(TeeError):
    pass


class ProtocolViolation(TeeError):
    def __init__(self, state: str, kind: str, detail: str = "", code: ErrorCode = ErrorCode.PROTOCOL_VIOLATION):
        super().__init__(f"{kind} not acceptable in state {state}" + (f": {detail}" if detail else ""))
        self.state = state
        self.kind = kind
        self.code = code


class _Sealed:
    """Holder whose contents never appear in repr, pickles or copies."""

    __slots__ = ("_value",)

    def __init__(self, value):
        self._value = value

    def __repr__(self) -> str:
        return "<sealed>"

    def __reduce__(self):
        raise TypeError("sealed values cannot be serialized")


class Manufacturer:
    """Holds the root of trust; only its public half is ever exposed."""

    def __init__(self, rng: Optional[Randomness] = None):
        self._rot = _Sealed(security.keygen(rng))

    @property
    def rot_pub(self) -> bytes:
        return self._rot._value.public

    def certify_platform(self, plat_pub: bytes) -> PlatformCertificate:
        return issue_pc(plat_pub, self._rot._value)

    def __reduce__(self):
        raise TypeError("a manufacturer cannot be serialized")


class IcPhase(str, Enum):
    READY = "ready"
    GREETED = "greeted"
    NEGOTIATED = "negotiated"
    DONE = "done"
    FAILED = "failed"


class IsolatedComputation:
    """TCPA-IC(X, B, P). Driven one message at a time by its platform."""

    def __init__(self, x_code: bytes, b_config: bytes, p_props: bytes, pc: PlatformCertificate,
                 rng: Optional[Randomness] = None, digest_only: bool = False):
        self.x_code = x_code
        self.b_config = b_config
        self.p_props = p_props
        self.m_ic = security.measure(x_code, b_config, p_props)
        self.pc = pc
        self.digest_only = digest_only
        self.phase = IcPhase.READY
        self.session_id: Optional[str] = None
        self.icc: Optional[IcCertificate] = None
        self._rng = rng
        self._keys = _Sealed(security.keygen(rng))
        self._session_key = _Sealed(None)
        self._lock = threading.Lock()

    @property
    def ic_pub(self) -> bytes:
        return self._keys._value.public

    def __reduce__(self):
        raise TypeError("an isolated computation cannot be serialized")

    def handle(self, msg: Message) -> list[Message]:
        with self._lock:
            try:
                return self._handle(msg)
            except ProtocolViolation as e:
                logger.warning(f"IC {self.m_ic.hex()[:12]}: {e}")
                if self.phase != IcPhase.DONE:
                    self.phase = IcPhase.FAILED
                self._session_key = _Sealed(None)
                return [frames.Error(e.code, str(e))]

    def _violation(self, msg: Message, detail: str = "", code: ErrorCode = ErrorCode.PROTOCOL_VIOLATION):
        return ProtocolViolation(self.phase.value, msg.TYPE.name, detail, code)

    def _handle(self, msg: Message) -> list[Message]:
        phase = self.phase
        if isinstance(msg, frames.RequestAttestation) and phase not in (IcPhase.DONE, IcPhase.FAILED):
            return [frames.AttestationResponse(self.pc.encode(), self.icc.encode())]
        if phase == IcPhase.READY and isinstance(msg, frames.Hello):
            self.session_id = msg.session_id
            self.phase = IcPhase.GREETED
            return [frames.Hello(msg.session_id, "ic")]
        if phase == IcPhase.GREETED and isinstance(msg, frames.AgreeParams):
            return [frames.AgreeParams(security.hash(self.x_code), security.hash(self.b_config),
                                       security.hash(self.p_props))]
        if phase == IcPhase.GREETED and isinstance(msg, frames.KeyShare):
            return [self._negotiate(msg)]
        if phase == IcPhase.NEGOTIATED and isinstance(msg, frames.SubmitJob):
            return [self._analyse(msg)]
        raise self._violation(msg)

    def _negotiate(self, msg: frames.KeyShare) -> Message:
        share_pub, share_priv = security.dh_keypair(self._rng)
        try:
            key = security.dh_shared(share_priv, msg.share)
        except CryptoError as e:
            raise self._violation(msg, str(e), ErrorCode.AUTH_FAILURE) from e
        self._session_key = _Sealed(key)
        self.phase = IcPhase.NEGOTIATED
        signature = self._keys._value.sign(share_pub + msg.share)
        logger.info(f"IC {self.m_ic.hex()[:12]}: session key negotiated")
        return frames.KeyShare(share_pub, signature)

    def _analyse(self, msg: frames.SubmitJob) -> Message:
        try:
            source = security.sym_decrypt(self._session_key._value, msg.s_t)
        except AuthFailure as e:
            raise self._violation(msg, "S_T failed authenticated decryption", ErrorCode.AUTH_FAILURE) from e
        try:
            analyzer = AnalyzerConfig.from_yaml(self.x_code)
            builder = BuilderConfig.from_bytes(self.b_config)
            props = PropertySet.from_bytes(self.p_props)
        except (ConfigError, PropertyError) as e:
            raise self._violation(msg, f"unusable parameters: {e}", ErrorCode.INTERNAL) from e
        try:
            built = check_build(builder, source, msg.e)
        except BuildFailed as e:
            # the diagnostic would quote S, so only its position leaves
            raise self._violation(msg, f"build failed at {e.line}:{e.column}", ErrorCode.BUILD_FAILED) from e
        try:
            analysis = init_analysis(parse_module(built.rebuilt), built.source_map, props)
            report = explore(analysis, analyzer.bounds).with_eo(built.eo)
        except (SymexecError, WasmError) as e:
            raise self._violation(msg, f"analysis failed: {type(e).__name__}", ErrorCode.ANALYSIS_FAILED) from e
        except Exception as e:
            # the message or traceback may quote S
            logger.error(f"IC {self.m_ic.hex()[:12]}: analyser crashed with {type(e).__name__}")
            raise self._violation(msg, f"analysis failed: {type(e).__name__}", ErrorCode.ANALYSIS_FAILED) from e

        cc = issue_cc(security.hash(source), built.executable, report, self._keys._value, self.digest_only)
        self.phase = IcPhase.DONE
        self._session_key = _Sealed(None)
        logger.info(f"IC {self.m_ic.hex()[:12]}: analysis done, eo={report.eo}, {report.verdicts()}")
        return frames.ComplianceResult(cc.encode())


@dataclass(frozen=True)
class IcInfo:
    """Everything a host may learn about a loaded computation."""

    m_ic: Measurement
    ic_pub: bytes
    phase: IcPhase


class Platform:
    def __init__(self, manufacturer: Manufacturer, rng: Optional[Randomness] = None):
        self._rng = rng
        self._plat = _Sealed(security.keygen(rng))
        self.pc = manufacturer.certify_platform(self._plat._value.public)
        self._ics: dict[str, IsolatedComputation] = {}
        self._lock = threading.Lock()

    @property
    def plat_pub(self) -> bytes:
        return self._plat._value.public

    def __reduce__(self):
        raise TypeError("a platform cannot be serialized")

    def load(self, x_code: bytes, b_config: bytes, p_props: bytes,
             digest_only: bool = False) -> tuple[str, IcCertificate]:
        for name, image in (("X", x_code), ("B", b_config), ("P", p_props)):
            if not image:
                raise EmptyImage(f"image {name} is empty")
        ic = IsolatedComputation(x_code, b_config, p_props, self.pc, self._rng, digest_only)
        ic.icc = issue_icc(ic.m_ic, ic.ic_pub, self._plat._value)
        with self._lock:
            ic_id = uuid.uuid4().hex if self._rng is None else self._rng.bytes(16).hex()
            self._ics[ic_id] = ic
        logger.info(f"loaded IC {ic_id[:8]} with measurement {ic.m_ic.hex()[:16]}")
        return ic_id, ic.icc

    def _ic(self, ic_id: str) -> IsolatedComputation:
        try:
            return self._ics[ic_id]
        except KeyError:
            raise UnknownIc(ic_id) from None

    def info(self, ic_id: str) -> IcInfo:
        ic = self._ic(ic_id)
        return IcInfo(ic.m_ic, ic.ic_pub, ic.phase)

    def handle(self, ic_id: str, msg: Message) -> list[Message]:
        return self._ic(ic_id).handle(msg)


def platform_setup(man: Manufacturer, rng: Optional[Randomness] = None) -> Platform:
    return Platform(man, rng)


def load_ic(p: Platform, x_code: bytes, b_config: bytes, p_props: bytes,
            digest_only: bool = False) -> tuple[str, IcCertificate]:
    return p.load(x_code, b_config, p_props, digest_only)


def ic_handle_message(p: Platform, ic_id: str, msg: Message) -> list[Message]:
    return p.handle(ic_id, msg)
