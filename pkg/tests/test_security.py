import pytest
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from tcpa import security
from tcpa.security import (
    KDF_INFO,
    AuthFailure,
    BadKeyLength,
    MalformedKey,
    MalformedShare,
    MalformedSignature,
    Randomness,
    dh_keypair,
    dh_shared,
    keygen,
    keypair_from_private,
    measure,
    sign,
    sym_decrypt,
    sym_encrypt,
    verify,
)

# RFC 8032, test 1
ED_SK = bytes.fromhex("9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60")
ED_PK = bytes.fromhex("d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a")
ED_SIG = bytes.fromhex(
    "e5564300c360ac729086e2cc806e828a84877f1eb8e5d974d873e065224901555"
    "fb8821590a33bacc61e39701cf9b46bd25bf5f0595bbe24655141438e7a100b"
)

# RFC 7748, section 6.1
ALICE_PRIV = bytes.fromhex("77076d0a7318a57d3c16c17251b26645df4c2f87ebc0992ab177fba51db92c2a")
ALICE_PUB = bytes.fromhex("8520f0098930a754748b7ddcb43ef75a0dbf3a0d26381af4eba4a98eaa9b4e6a")
BOB_PRIV = bytes.fromhex("5dab087e624a8a4b79e17f8b83800ee66f3bb1292618b6fd1c2f8b27ff88e0eb")
BOB_PUB = bytes.fromhex("de9edb7d7b7dc1b4d35b61c2ece435373f8343c85b78674dadfc7e146f882b4f")
SHARED = bytes.fromhex("4a5d9d5ba4ce2de1728e3bf480350f25e07e21c947d19e3376f09b3c1e161742")


def test_sha256_vectors():
    assert security.hash(b"").hex() == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    assert security.hash(b"abc").hex() == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"


def test_ed25519_vector():
    kp = keypair_from_private(ED_SK)
    assert kp.public == ED_PK
    assert sign(b"", ED_SK) == ED_SIG
    assert verify(ED_SIG, b"", ED_PK)
    assert not verify(ED_SIG, b"x", ED_PK)
    tampered = bytes([ED_SIG[0] ^ 1]) + ED_SIG[1:]
    assert not verify(tampered, b"", ED_PK)


def test_x25519_vector_and_session_key():
    raw = X25519PrivateKey.from_private_bytes(ALICE_PRIV).exchange(X25519PublicKey.from_public_bytes(BOB_PUB))
    assert raw == SHARED
    assert X25519PrivateKey.from_private_bytes(BOB_PRIV).public_key().public_bytes_raw() == BOB_PUB
    expected = HKDF(algorithm=hashes.SHA256(), length=32, salt=None, info=KDF_INFO).derive(SHARED)
    assert dh_shared(ALICE_PRIV, BOB_PUB) == dh_shared(BOB_PRIV, ALICE_PUB) == expected


def test_fresh_shares_agree(rng):
    a_pub, a_priv = dh_keypair(rng)
    b_pub, b_priv = dh_keypair(rng)
    assert dh_shared(a_priv, b_pub) == dh_shared(b_priv, a_pub)
    assert a_pub != b_pub


def test_malformed_keys_and_shares():
    with pytest.raises(MalformedKey):
        keypair_from_private(b"short")
    with pytest.raises(MalformedKey):
        verify(ED_SIG, b"", ED_PK[:31])
    with pytest.raises(MalformedSignature):
        verify(ED_SIG[:63], b"", ED_PK)
    with pytest.raises(MalformedShare):
        dh_shared(ALICE_PRIV, b"\x01" * 31)
    # the all-zero point has small order
    with pytest.raises(MalformedShare):
        dh_shared(ALICE_PRIV, bytes(32))


def test_authenticated_encryption(rng):
    key = rng.bytes(32)
    sealed = sym_encrypt(key, b"program text", rng, aad=b"header")
    assert b"program text" not in sealed
    assert sym_decrypt(key, sealed, aad=b"header") == b"program text"
    with pytest.raises(AuthFailure):
        sym_decrypt(key, sealed, aad=b"other")
    with pytest.raises(AuthFailure):
        sym_decrypt(key, sealed[:-1] + bytes([sealed[-1] ^ 0x80]), aad=b"header")
    with pytest.raises(AuthFailure):
        sym_decrypt(rng.bytes(32), sealed, aad=b"header")
    with pytest.raises(AuthFailure):
        sym_decrypt(key, sealed[:20])
    with pytest.raises(BadKeyLength):
        sym_encrypt(key[:16], b"x", rng)


def test_nonces_differ_between_encryptions(rng):
    key = rng.bytes(32)
    assert sym_encrypt(key, b"same", rng) != sym_encrypt(key, b"same", rng)


def test_seeded_randomness_is_reproducible():
    assert Randomness(5).bytes(16) == Randomness(5).bytes(16)
    assert Randomness(5).bytes(16) != Randomness(6).bytes(16)
    assert keygen(Randomness(1)).public == keygen(Randomness(1)).public
    assert len(Randomness().bytes(8)) == 8


def test_seed_from_environment(monkeypatch):
    monkeypatch.setenv("TCPA_SEED", "0x2a")
    assert security.default_randomness().seed == 42
    first = keygen().public
    monkeypatch.setenv("TCPA_SEED", "42")
    # a fresh stream from the same seed
    monkeypatch.setattr(security, "_default", None)
    assert keygen().public == first


def test_measurement_binds_each_image_separately():
    m = measure(b"x", b"b", b"p")
    assert m == measure(b"x", b"b", b"p")
    assert m != measure(b"xb", b"", b"p")
    assert m != measure(b"x", b"b", b"q")
    assert len(m.hex()) == 64
