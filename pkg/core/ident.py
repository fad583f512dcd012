"""
ident.py — Identifiers, the hash oracle, and the signature abstraction

Every overlay node (peer, transaction, block, pointer) is addressed by
s-bit identifiers. H is SHA-256 truncated to its first s bits, read
big-endian, and is treated as a random oracle throughout.

Two signature schemes sit behind one sign/verify contract:

  hmac     — HMAC-SHA-256 with a per-peer secret. Fast and deterministic;
             the simulator default. The verify key is the secret itself, so
             unforgeability is a harness convention (adversaries never read
             honest keys), which is how an ideal signature is modeled.
  ed25519  — Real asymmetric signatures via `cryptography`, for
             protocol-mode tests.

Key pairs are derived from a seed, so a seeded run regenerates the same
peers, identifiers and signatures every time.
"""

import hashlib
import hmac
import logging
import os
from dataclasses import dataclass, field
from functools import lru_cache

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from dotenv import load_dotenv

from core.encoding import encode_fields
from core.errors import InvalidParameterError, NodeNotFoundError

load_dotenv()

logger = logging.getLogger(__name__)

# ── Config ────────────────────────────────────────────────────────────────────

MAX_WIDTH = 256
DEFAULT_WIDTH = int(os.getenv("LIGHTCHAIN_WIDTH_S", "256"))
DEFAULT_SCHEME = os.getenv("LIGHTCHAIN_SIGNATURE_SCHEME", "hmac")

HMAC_SCHEME = "hmac"
ED25519_SCHEME = "ed25519"
SCHEMES = (HMAC_SCHEME, ED25519_SCHEME)


def _check_width(width_s: int) -> None:
    if not 1 <= width_s <= MAX_WIDTH:
        raise InvalidParameterError(
            f"Identifier width must be in [1, {MAX_WIDTH}] bits, got {width_s}"
        )


# ── Identifiers ───────────────────────────────────────────────────────────────


@dataclass(frozen=True, order=True, slots=True)
class Identifier:
    """An s-bit unsigned value; ordered by integer value."""

    value: int
    width: int

    def __post_init__(self) -> None:
        _check_width(self.width)
        if not 0 <= self.value < 1 << self.width:
            raise InvalidParameterError(
                f"Value {self.value:#x} does not fit in {self.width} bits"
            )

    @classmethod
    def zero(cls, width_s: int) -> "Identifier":
        return cls(0, width_s)

    @classmethod
    def max(cls, width_s: int) -> "Identifier":
        return cls((1 << width_s) - 1, width_s)

    @classmethod
    def from_bytes(cls, data: bytes, width_s: int) -> "Identifier":
        return cls(int.from_bytes(data, "big"), width_s)

    @classmethod
    def from_hex(cls, text: str, width_s: int) -> "Identifier":
        return cls(int(text, 16), width_s)

    def to_bytes(self) -> bytes:
        """Canonical big-endian form, ceil(s/8) bytes."""
        return self.value.to_bytes((self.width + 7) // 8, "big")

    def hex(self) -> str:
        return self.to_bytes().hex()

    def prefix(self, bits: int) -> int:
        """The top `bits` bits of the identifier, used as a membership-vector prefix."""
        return self.value >> (self.width - bits) if bits else 0

    def __str__(self) -> str:
        text = self.hex()
        return text if len(text) <= 16 else f"{text[:12]}…"


def hash_to_id(payload: bytes, width_s: int) -> Identifier:
    """First width_s bits of SHA-256(payload), big-endian."""
    _check_width(width_s)
    digest = hashlib.sha256(payload).digest()
    return Identifier(int.from_bytes(digest, "big") >> (MAX_WIDTH - width_s), width_s)


# ── Keys & signatures ─────────────────────────────────────────────────────────


@dataclass(frozen=True, slots=True)
class VerifyKey:
    scheme: str
    material: bytes

    def encode(self) -> bytes:
        """Canonical encoding hashed into peer identifiers."""
        return encode_fields(self.material)


@dataclass(frozen=True, slots=True)
class SigningKey:
    scheme: str
    material: bytes = field(repr=False)
    signer_id: Identifier


@dataclass(frozen=True, slots=True)
class KeyPair:
    signing_key: SigningKey
    verify_key: VerifyKey

    @property
    def peer_id(self) -> Identifier:
        return self.signing_key.signer_id


@dataclass(frozen=True, slots=True)
class Signature:
    value: bytes
    signer_id: Identifier

    def encode(self) -> bytes:
        return encode_fields(self.signer_id.to_bytes(), self.value)


def derive_peer_identifiers(
    verify_key: VerifyKey, width_s: int
) -> tuple[Identifier, Identifier]:
    """Both identifiers of a peer are the hash of its public key."""
    ident = hash_to_id(verify_key.encode(), width_s)
    return ident, ident


@lru_cache(maxsize=4096)
def _ed25519_private(material: bytes) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(material)


@lru_cache(maxsize=4096)
def _ed25519_public(material: bytes) -> Ed25519PublicKey:
    return Ed25519PublicKey.from_public_bytes(material)


def generate_keypair(
    seed: bytes,
    width_s: int = DEFAULT_WIDTH,
    scheme: str = DEFAULT_SCHEME,
) -> KeyPair:
    """
    Derive a key pair deterministically from seed bytes.

    The same (seed, width_s, scheme) always yields the same pair and hence
    the same peer identifiers.
    """
    secret = hashlib.sha256(b"lightchain-key|" + seed).digest()
    if scheme == HMAC_SCHEME:
        verify_key = VerifyKey(HMAC_SCHEME, secret)
    elif scheme == ED25519_SCHEME:
        public = _ed25519_private(secret).public_key().public_bytes(
            encoding=serialization.Encoding.Raw,
            format=serialization.PublicFormat.Raw,
        )
        verify_key = VerifyKey(ED25519_SCHEME, public)
    else:
        raise InvalidParameterError(
            f"Unknown signature scheme {scheme!r}; expected one of {SCHEMES}"
        )
    peer_id, _ = derive_peer_identifiers(verify_key, width_s)
    return KeyPair(SigningKey(scheme, secret, peer_id), verify_key)


def sign(signing_key: SigningKey, message: bytes) -> Signature:
    if signing_key.scheme == HMAC_SCHEME:
        value = hmac.new(signing_key.material, message, hashlib.sha256).digest()
    elif signing_key.scheme == ED25519_SCHEME:
        value = _ed25519_private(signing_key.material).sign(message)
    else:
        raise InvalidParameterError(f"Unknown signature scheme {signing_key.scheme!r}")
    return Signature(value, signing_key.signer_id)


def verify(verify_key: VerifyKey, message: bytes, sig: Signature) -> bool:
    """True iff sig was produced over exactly this message by the matching key."""
    if not isinstance(sig, Signature) or not isinstance(sig.value, bytes):
        return False
    if verify_key.scheme == HMAC_SCHEME:
        expected = hmac.new(verify_key.material, message, hashlib.sha256).digest()
        return hmac.compare_digest(expected, sig.value)
    if verify_key.scheme == ED25519_SCHEME:
        try:
            _ed25519_public(verify_key.material).verify(sig.value, message)
            return True
        except (InvalidSignature, ValueError):
            return False
    return False


# ── Key directory ─────────────────────────────────────────────────────────────


class KeyDirectory:
    """
    Maps peer numIDs to verify keys.

    Stands in for the public-key lookup every peer can perform for another
    peer it has an identifier for (peer identifiers are key hashes, so a key
    offered for an identifier is self-certifying).
    """

    def __init__(self) -> None:
        self._keys: dict[Identifier, VerifyKey] = {}

    def register(
        self, peer_id: Identifier, verify_key: VerifyKey, verify_binding: bool = True
    ) -> None:
        derived, _ = derive_peer_identifiers(verify_key, peer_id.width)
        if verify_binding and derived != peer_id:
            raise InvalidParameterError(
                f"Verify key does not hash to peer identifier {peer_id}"
            )
        self._keys[peer_id] = verify_key

    def __contains__(self, peer_id: object) -> bool:
        return peer_id in self._keys

    def __len__(self) -> int:
        return len(self._keys)

    def key_for(self, peer_id: Identifier) -> VerifyKey:
        try:
            return self._keys[peer_id]
        except KeyError:
            raise NodeNotFoundError(f"No verify key registered for peer {peer_id}") from None

    def verify(self, peer_id: Identifier, message: bytes, sig: Signature) -> bool:
        """Verify sig as peer_id's signature over message; False for unknown peers."""
        key = self._keys.get(peer_id)
        if key is None or sig.signer_id != peer_id:
            return False
        return verify(key, message, sig)
