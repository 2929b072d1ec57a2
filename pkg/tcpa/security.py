"""Cryptographic primitives used by the protocol.

Simulation grade: keys live in process memory with no hardware sealing.

Formats:
- Ed25519 keys are 32 raw bytes each, signatures 64 raw bytes.
- Key-agreement shares are raw 32-byte X25519 public keys; the shared secret
  is passed through HKDF-SHA256 before use.
- Ciphertexts are ``nonce (12 bytes) || ChaCha20-Poly1305 ciphertext+tag``.
- A measurement is SHA-256 over the length-prefixed X, B and P images.
"""
import hashlib
import logging
import os
import random
import threading
from dataclasses import dataclass, field
from typing import Optional

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from . import codec
from .config import seed_from_env

logger = logging.getLogger(__name__)

SCHEME_ED25519 = "ed25519"
SCHEME_X25519 = "x25519"
KEY_LEN = 32
SIGNATURE_LEN = 64
NONCE_LEN = 12
DIGEST_LEN = 32
KDF_INFO = b"tcpa session key v1"


class CryptoError(Exception):
    pass


class MalformedKey(CryptoError):
    pass


class MalformedSignature(CryptoError):
    pass


class MalformedShare(CryptoError):
    pass


class AuthFailure(CryptoError):
    pass


class BadKeyLength(CryptoError):
    pass


class Randomness:
    """Source of key and nonce bytes.

    Unseeded it reads ``os.urandom``; seeded it is a reproducible stream for
    tests and benchmarks. Safe to share between threads.
    """

    def __init__(self, seed: Optional[int] = None):
        self.seed = seed
        self._rng = random.Random(seed) if seed is not None else None
        self._lock = threading.Lock()

    @classmethod
    def from_env(cls) -> "Randomness":
        return cls(seed_from_env())

    def bytes(self, n: int) -> bytes:
        if self._rng is None:
            return os.urandom(n)
        with self._lock:
            return self._rng.randbytes(n)


_default: Optional[Randomness] = None
_default_lock = threading.Lock()


def default_randomness() -> Randomness:
    global _default
    with _default_lock:
        if _default is None or _default.seed != seed_from_env():
            _default = Randomness.from_env()
        return _default


def _rng(rng: Optional[Randomness]) -> Randomness:
    return rng if rng is not None else default_randomness()


# ---------------------------------------------------------------------------
# Hashing and measurement
# ---------------------------------------------------------------------------

def hash(data: bytes) -> bytes:  # noqa: A001
    return hashlib.sha256(data).digest()


@dataclass(frozen=True)
class Measurement:
    digest: bytes

    def __post_init__(self) -> None:
        if len(self.digest) != DIGEST_LEN:
            raise ValueError(f"measurement must be {DIGEST_LEN} bytes")

    def hex(self) -> str:
        return self.digest.hex()

    def __str__(self) -> str:
        return self.digest.hex()


def measure(x_code: bytes, b_config: bytes, p_props: bytes) -> Measurement:
    return Measurement(hash(codec.fields([x_code, b_config, p_props])))


# ---------------------------------------------------------------------------
# Signatures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KeyPair:
    public: bytes
    private: bytes = field(repr=False)
    scheme: str = SCHEME_ED25519

    def sign(self, message: bytes) -> bytes:
        return sign(message, self.private)


def keypair_from_private(private: bytes) -> KeyPair:
    if len(private) != KEY_LEN:
        raise MalformedKey(f"private key must be {KEY_LEN} bytes, got {len(private)}")
    pk = Ed25519PrivateKey.from_private_bytes(private).public_key().public_bytes_raw()
    return KeyPair(pk, bytes(private))


def keygen(rng: Optional[Randomness] = None) -> KeyPair:
    return keypair_from_private(_rng(rng).bytes(KEY_LEN))


def sign(message: bytes, private: bytes) -> bytes:
    if len(private) != KEY_LEN:
        raise MalformedKey(f"private key must be {KEY_LEN} bytes, got {len(private)}")
    return Ed25519PrivateKey.from_private_bytes(private).sign(message)


def verify(signature: bytes, message: bytes, public: bytes) -> bool:
    if len(public) != KEY_LEN:
        raise MalformedKey(f"public key must be {KEY_LEN} bytes, got {len(public)}")
    if len(signature) != SIGNATURE_LEN:
        raise MalformedSignature(f"signature must be {SIGNATURE_LEN} bytes, got {len(signature)}")
    try:
        key = Ed25519PublicKey.from_public_bytes(public)
    except ValueError as e:
        raise MalformedKey(f"not an Ed25519 public key: {e}") from e
    try:
        key.verify(signature, message)
        return True
    except InvalidSignature:
        return False


# ---------------------------------------------------------------------------
# Key agreement
# ---------------------------------------------------------------------------

def dh_keypair(rng: Optional[Randomness] = None) -> tuple[bytes, bytes]:
    """Fresh ``(share_pub, share_priv)``."""
    priv = _rng(rng).bytes(KEY_LEN)
    pub = X25519PrivateKey.from_private_bytes(priv).public_key().public_bytes_raw()
    return pub, priv


def dh_shared(share_priv: bytes, peer_pub: bytes) -> bytes:
    """Session key T derived from our private share and the peer's public share."""
    if len(share_priv) != KEY_LEN:
        raise MalformedKey("key-agreement private share must be 32 bytes")
    if len(peer_pub) != KEY_LEN:
        raise MalformedShare(f"peer share must be {KEY_LEN} bytes, got {len(peer_pub)}")
    try:
        secret = X25519PrivateKey.from_private_bytes(share_priv).exchange(X25519PublicKey.from_public_bytes(peer_pub))
    except ValueError as e:
        # low-order points give an all-zero secret, which the library refuses
        raise MalformedShare(f"unusable peer share: {e}") from e
    return HKDF(algorithm=hashes.SHA256(), length=KEY_LEN, salt=None, info=KDF_INFO).derive(secret)


# ---------------------------------------------------------------------------
# Authenticated encryption
# ---------------------------------------------------------------------------

def sym_encrypt(key: bytes, plaintext: bytes, rng: Optional[Randomness] = None, aad: bytes = b"") -> bytes:
    if len(key) != KEY_LEN:
        raise BadKeyLength(f"key must be {KEY_LEN} bytes, got {len(key)}")
    nonce = _rng(rng).bytes(NONCE_LEN)
    return nonce + ChaCha20Poly1305(key).encrypt(nonce, plaintext, aad or None)


def sym_decrypt(key: bytes, ciphertext: bytes, aad: bytes = b"") -> bytes:
    if len(key) != KEY_LEN:
        raise BadKeyLength(f"key must be {KEY_LEN} bytes, got {len(key)}")
    if len(ciphertext) < NONCE_LEN + 16:
        raise AuthFailure("ciphertext shorter than nonce and tag")
    nonce, body = ciphertext[:NONCE_LEN], ciphertext[NONCE_LEN:]
    try:
        return ChaCha20Poly1305(key).decrypt(nonce, body, aad or None)
    except InvalidTag:
        logger.warning(f"decryption failed for a {len(ciphertext)}-byte ciphertext")
        raise AuthFailure("ciphertext failed authentication")
