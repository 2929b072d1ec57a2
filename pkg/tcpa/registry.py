"""Dual-signed property registry files (``.tcpr``).

Layout::

    "TCPR" | version (1 byte) | fields: P, provider_pub, provider_sig, consumer_pub, consumer_sig

Both signatures cover ``"TCPR" | version | field(P)``, so either party can sign
first. A missing signature is an empty field.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum

from . import codec, security
from .properties import PropertyError, PropertySet
from .security import CryptoError, KeyPair

logger = logging.getLogger(__name__)

MAGIC = b"TCPR"
VERSION = 1


class RegistryError(Exception):
    pass


class Role(str, Enum):
    PROVIDER = "provider"
    CONSUMER = "consumer"


@dataclass(frozen=True)
class PropertyRegistry:
    p_props: bytes
    provider_pub: bytes = b""
    provider_sig: bytes = b""
    consumer_pub: bytes = b""
    consumer_sig: bytes = b""

    @classmethod
    def create(cls, props: PropertySet) -> "PropertyRegistry":
        return cls(props.to_bytes())

    @property
    def properties(self) -> PropertySet:
        return PropertySet.from_bytes(self.p_props)

    def signed_region(self) -> bytes:
        return MAGIC + bytes([VERSION]) + codec.field(self.p_props)

    def sign(self, role: Role, key: KeyPair) -> "PropertyRegistry":
        sig = key.sign(self.signed_region())
        if role == Role.PROVIDER:
            return replace(self, provider_pub=key.public, provider_sig=sig)
        return replace(self, consumer_pub=key.public, consumer_sig=sig)

    def _signed_by(self, public: bytes, sig: bytes) -> bool:
        if not public or not sig:
            return False
        try:
            return security.verify(sig, self.signed_region(), public)
        except CryptoError:
            return False

    def verify(self, provider_pub: bytes | None = None, consumer_pub: bytes | None = None) -> bool:
        """Both signatures present and valid, optionally by the expected keys."""
        if provider_pub is not None and provider_pub != self.provider_pub:
            return False
        if consumer_pub is not None and consumer_pub != self.consumer_pub:
            return False
        ok = self._signed_by(self.provider_pub, self.provider_sig) and \
            self._signed_by(self.consumer_pub, self.consumer_sig)
        logger.info(f"registry {security.hash(self.p_props).hex()[:12]}: signatures {'valid' if ok else 'invalid'}")
        return ok

    def to_bytes(self) -> bytes:
        return MAGIC + bytes([VERSION]) + codec.fields(
            [self.p_props, self.provider_pub, self.provider_sig, self.consumer_pub, self.consumer_sig])

    @classmethod
    def from_bytes(cls, data: bytes) -> "PropertyRegistry":
        if data[:4] != MAGIC or len(data) < 5:
            raise RegistryError("not a property registry file")
        if data[4] != VERSION:
            raise RegistryError(f"unsupported registry version {data[4]}")
        try:
            reg = cls(*codec.split_fields(data[5:], 5))
            PropertySet.from_bytes(reg.p_props)
        except (codec.CodecError, PropertyError) as e:
            raise RegistryError(f"malformed registry: {e}") from e
        return reg
