"""
encoding.py — Canonical byte encodings for every hashed or signed value

Every concatenation that feeds a hash or a signature is a sequence of
length-prefixed fields:

    field := len(payload) as 4-byte big-endian || payload

so that "a||bc" and "ab||c" never collide. Integers use fixed-width
big-endian encodings (4 bytes for indices, 8 bytes for amounts). These
encodings are normative: fixture digests in the test suite are computed
from them with plain hashlib.
"""

from core.errors import InvalidParameterError

LENGTH_PREFIX_BYTES = 4
INDEX_BYTES = 4
AMOUNT_BYTES = 8


def frame(payload: bytes) -> bytes:
    """Return payload prefixed with its 4-byte big-endian length."""
    if len(payload) >= 1 << (8 * LENGTH_PREFIX_BYTES):
        raise InvalidParameterError(f"Field too long to frame: {len(payload)} bytes")
    return len(payload).to_bytes(LENGTH_PREFIX_BYTES, "big") + payload


def encode_fields(*fields: bytes) -> bytes:
    """Concatenate fields, each framed."""
    return b"".join(frame(f) for f in fields)


def encode_index(i: int) -> bytes:
    """Encode a 1-based validator / introducer index as 4-byte big-endian."""
    if i < 0 or i >= 1 << (8 * INDEX_BYTES):
        raise InvalidParameterError(f"Index {i} does not fit in {INDEX_BYTES} bytes")
    return i.to_bytes(INDEX_BYTES, "big")


def encode_amount(amount: int) -> bytes:
    """Encode a balance amount as 8-byte big-endian two's complement."""
    bound = 1 << (8 * AMOUNT_BYTES - 1)
    if not -bound <= amount < bound:
        raise InvalidParameterError(f"Amount {amount} does not fit in {AMOUNT_BYTES} signed bytes")
    return amount.to_bytes(AMOUNT_BYTES, "big", signed=True)


def split_fields(data: bytes) -> list[bytes]:
    """Inverse of encode_fields. Raises InvalidParameterError on truncated input."""
    fields: list[bytes] = []
    pos = 0
    while pos < len(data):
        if pos + LENGTH_PREFIX_BYTES > len(data):
            raise InvalidParameterError("Truncated length prefix")
        size = int.from_bytes(data[pos : pos + LENGTH_PREFIX_BYTES], "big")
        pos += LENGTH_PREFIX_BYTES
        if pos + size > len(data):
            raise InvalidParameterError("Truncated field payload")
        fields.append(data[pos : pos + size])
        pos += size
    return fields
