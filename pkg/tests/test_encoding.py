"""
test_encoding.py — Length-prefixed canonical framing
"""

import pytest

from core.encoding import (
    encode_amount,
    encode_fields,
    encode_index,
    frame,
    split_fields,
)
from core.errors import InvalidParameterError


def test_frame_prefixes_big_endian_length():
    assert frame(b"abc") == b"\x00\x00\x00\x03abc"
    assert frame(b"") == b"\x00\x00\x00\x00"


def test_concatenation_is_unambiguous():
    assert encode_fields(b"a", b"bc") != encode_fields(b"ab", b"c")
    assert split_fields(encode_fields(b"a", b"", b"bc")) == [b"a", b"", b"bc"]


def test_fixed_width_integers():
    assert encode_index(1) == b"\x00\x00\x00\x01"
    assert encode_amount(-1) == b"\xff" * 8
    assert encode_amount(258) == b"\x00" * 6 + b"\x01\x02"
    with pytest.raises(InvalidParameterError):
        encode_index(1 << 32)
    with pytest.raises(InvalidParameterError):
        encode_index(-1)


@pytest.mark.parametrize("amount", [1 << 63, -(1 << 63) - 1, 10**30])
def test_amount_out_of_range_is_rejected(amount):
    with pytest.raises(InvalidParameterError):
        encode_amount(amount)


def test_amount_extremes_encode():
    assert encode_amount((1 << 63) - 1) == b"\x7f" + b"\xff" * 7
    assert encode_amount(-(1 << 63)) == b"\x80" + b"\x00" * 7


@pytest.mark.parametrize("data", [b"\x00\x00", b"\x00\x00\x00\x05abc"])
def test_split_rejects_truncated_input(data):
    with pytest.raises(InvalidParameterError):
        split_fields(data)
