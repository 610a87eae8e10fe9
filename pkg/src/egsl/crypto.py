"""SHA-256 hashing and Ed25519 keys."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .encoding import canonical_encode

HASH_SIZE = 32
ZERO_HASH = bytes(HASH_SIZE)


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def hash_value(value) -> bytes:
    return sha256(canonical_encode(value))


def identity_id(public_key: bytes) -> str:
    """IdentityId: lowercase hex SHA-256 of the raw public key."""
    return sha256(public_key).hex()


@dataclass(frozen=True)
class Signature:
    signer: str
    sig: bytes

    def to_value(self) -> dict:
        return {"k": self.signer, "s": self.sig}

    @classmethod
    def from_value(cls, value: dict) -> "Signature":
        return cls(signer=value["k"], sig=value["s"])


class KeyPair:
    """Ed25519 key pair. Seeded construction keeps scenario runs reproducible."""

    def __init__(self, private_key: Ed25519PrivateKey):
        self._private = private_key
        self.public_key: bytes = private_key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        self.id: str = identity_id(self.public_key)

    @classmethod
    def generate(cls) -> "KeyPair":
        return cls(Ed25519PrivateKey.generate())

    @classmethod
    def from_seed(cls, *parts: str | int | bytes) -> "KeyPair":
        material = canonical_encode(["egsl-key", *[p if not isinstance(p, bytearray) else bytes(p) for p in parts]])
        return cls(Ed25519PrivateKey.from_private_bytes(sha256(material)))

    def sign(self, message: bytes) -> Signature:
        return Signature(self.id, self._private.sign(message))

    def sign_value(self, value) -> Signature:
        return self.sign(canonical_encode(value))

    def __repr__(self) -> str:
        return f"KeyPair(id={self.id[:12]}...)"


@lru_cache(maxsize=65536)
def verify_signature(public_key: bytes, signature: bytes, message: bytes) -> bool:
    if len(public_key) != 32 or len(signature) != 64:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True
