"""Keys, signatures and the canonical field encoder shared by every module.

Two signature backends live behind one interface:

``toy``
    HMAC-SHA256 keyed by the secret. Verification consults an in-process
    registry that maps public keys to secrets, which is fine for a closed
    simulation and an order of magnitude faster than a real scheme.
``ed25519``
    Real asymmetric signatures from :mod:`cryptography`. Ed25519 signing is
    deterministic, so traces stay reproducible.

The default backend is ``toy``; override with :func:`set_default_scheme` or the
``DCWC_SCHEME`` environment variable.
"""
from __future__ import annotations

import hashlib
import hmac
import os
import struct
from dataclasses import dataclass, field
from functools import lru_cache

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

SCHEMES = ("toy", "ed25519")
SIGNATURE_LENGTH = {"toy": 32, "ed25519": 64}
PUBLIC_KEY_LENGTH = 32

_default_scheme = os.environ.get("DCWC_SCHEME", "toy")
_toy_secrets: dict[bytes, bytes] = {}


def set_default_scheme(name: str) -> None:
    global _default_scheme
    if name not in SCHEMES:
        raise ValueError(f"unknown signature scheme {name!r}")
    _default_scheme = name


def default_scheme() -> str:
    return _default_scheme


@dataclass(frozen=True, order=True)
class PublicKey:
    data: bytes
    scheme: str = field(default="toy", compare=False)

    def hex(self) -> str:
        return self.data.hex()

    def short(self) -> str:
        return self.data.hex()[:8]

    def __repr__(self) -> str:
        return f"PublicKey({self.short()})"


@dataclass(frozen=True)
class Signature:
    data: bytes

    def __repr__(self) -> str:
        return f"Signature({self.data.hex()[:8]})"


@dataclass(frozen=True)
class KeyPair:
    secret: bytes = field(repr=False)
    public: PublicKey

    @property
    def scheme(self) -> str:
        return self.public.scheme


def keygen(seed: int, scheme: str | None = None) -> KeyPair:
    """Derive a key pair deterministically from a 64-bit seed."""
    scheme = scheme or _default_scheme
    if scheme not in SCHEMES:
        raise ValueError(f"unknown signature scheme {scheme!r}")
    seed_bytes = struct.pack(">Q", seed & 0xFFFFFFFFFFFFFFFF)
    secret = hashlib.sha256(b"dcwc-keygen/" + scheme.encode() + b"/" + seed_bytes).digest()
    if scheme == "toy":
        public = hashlib.sha256(b"dcwc-toy-pk/" + secret).digest()
        _toy_secrets[public] = secret
    else:
        sk = Ed25519PrivateKey.from_private_bytes(secret)
        public = sk.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
    return KeyPair(secret=secret, public=PublicKey(public, scheme))


@lru_cache(maxsize=4096)
def _ed25519_private(secret: bytes) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(secret)


@lru_cache(maxsize=4096)
def _ed25519_public(data: bytes) -> Ed25519PublicKey:
    return Ed25519PublicKey.from_public_bytes(data)


def sign(keys: KeyPair, message: bytes) -> Signature:
    if keys.scheme == "toy":
        return Signature(hmac.new(keys.secret, message, hashlib.sha256).digest())
    return Signature(_ed25519_private(keys.secret).sign(message))


@lru_cache(maxsize=1 << 16)
def _verify_cached(scheme: str, public: bytes, message: bytes, sig: bytes) -> bool:
    if len(sig) != SIGNATURE_LENGTH[scheme]:
        return False
    if scheme == "toy":
        expected = hmac.new(_toy_secrets[public], message, hashlib.sha256).digest()
        return hmac.compare_digest(expected, sig)
    try:
        _ed25519_public(public).verify(sig, message)
    except (InvalidSignature, ValueError):
        return False
    return True


def verify(public: PublicKey, message: bytes, signature: Signature | None) -> bool:
    """True iff ``signature`` was made by the secret matching ``public`` over ``message``."""
    if signature is None:
        return False
    # unknown toy keys are never cached so a later keygen cannot see a stale miss
    if public.scheme == "toy" and public.data not in _toy_secrets:
        return False
    return _verify_cached(public.scheme, public.data, bytes(message), signature.data)


# -- canonical encoding -----------------------------------------------------


def _field_bytes(value) -> bytes:
    if isinstance(value, (bytes, bytearray)):
        return bytes(value)
    if isinstance(value, bool):
        return b"\x01" if value else b"\x00"
    if isinstance(value, int):
        return value.to_bytes(8, "big", signed=True)
    if isinstance(value, str):
        return value.encode("utf-8")
    if isinstance(value, PublicKey):
        return value.data
    if isinstance(value, Signature):
        return value.data
    if value is None:
        return b""
    raise TypeError(f"cannot encode field of type {type(value).__name__}")


def encode_fields(*fields) -> bytes:
    """Concatenate fields, each as a 4-byte big-endian length then the raw bytes.

    Integers are 8-byte big-endian two's complement, strings UTF-8, keys and
    signatures their raw bytes.
    """
    out = bytearray()
    for value in fields:
        raw = _field_bytes(value)
        out += len(raw).to_bytes(4, "big")
        out += raw
    return bytes(out)


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()
