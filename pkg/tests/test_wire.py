import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rtvlab.transport.wire import (
    FIXED_HEADER,
    NO_REF,
    Feedback,
    Packet,
    ResendRequest,
    WireError,
    decode_control,
    encode_control,
)


def be(v, n):
    return v.to_bytes(n, "big")


SAMPLE = Packet("grace", 0x01020304, "P", 3, 24, "residual", 64, 22, 40, 7, 0,
                56320, 24, 29, 3, 0x01020303, b"\x10\x00\xab", b"payload")


def test_fixed_header_size():
    assert FIXED_HEADER == 37
    assert SAMPLE.size == 37 + 3 + 7


def test_golden_layout():
    expect = (
        b"\xa7\x01\x00" + be(0x01020304, 4) + b"\x01" + be(3, 2) + be(24, 2)
        + bytes([1, 64]) + be(22, 2) + be(40, 2) + bytes([7, 0])
        + be(56320, 4) + be(24, 2) + be(29, 2)
        + be(3, 2) + be(0x01020303, 4) + b"\x03" + b"\x10\x00\xab"
        + be(7, 2) + b"payload"
    )
    assert SAMPLE.to_bytes() == expect


def test_round_trip():
    assert Packet.from_bytes(SAMPLE.to_bytes()) == SAMPLE
    bare = Packet("fec", 9, "I", 0, 2, "fec", m=100, n=1, p=1)
    assert Packet.from_bytes(bare.to_bytes()) == bare
    assert bare.ref_id == NO_REF


@pytest.mark.parametrize("offset,value", [(0, 0x00), (1, 0x02), (2, 0x09), (7, 0x05), (12, 0x20)])
def test_bad_fields(offset, value):
    buf = bytearray(SAMPLE.to_bytes())
    buf[offset] = value
    with pytest.raises(WireError):
        Packet.from_bytes(bytes(buf))


def test_index_beyond_count():
    with pytest.raises(WireError):
        Packet.from_bytes(Packet("grace", 1, "P", 4, 4, "mv").to_bytes())


def test_length_mismatch():
    buf = SAMPLE.to_bytes()
    for b in (buf[:-1], buf + b"\x00", buf[:20]):
        with pytest.raises(WireError):
            Packet.from_bytes(b)


@given(st.binary(max_size=120))
def test_fuzz_never_crashes(buf):
    try:
        Packet.from_bytes(buf)
    except WireError:
        pass


def test_fuzz_mutations():
    rng = np.random.default_rng(0)
    good = SAMPLE.to_bytes()
    for _ in range(2000):
        b = bytearray(good)
        for pos in rng.integers(0, len(b), int(rng.integers(1, 4))):
            b[pos] = int(rng.integers(0, 256))
        try:
            Packet.from_bytes(bytes(b))
        except WireError:
            pass


class TestFeedback:
    def test_bitmap_1110(self):
        fb = Feedback(5, (True, True, True, False), 1234)
        raw = fb.to_bytes()
        assert raw == be(5, 4) + be(4, 2) + bytes([0b11100000]) + be(1234, 8)
        assert Feedback.from_bytes(raw) == fb
        assert fb.loss_rate == 0.25 and not fb.complete

    @given(st.integers(0, 2**32 - 1), st.lists(st.booleans(), min_size=1, max_size=40), st.integers(0, 2**63))
    def test_round_trip(self, fid, bits, ts):
        fb = Feedback(fid, tuple(bits), ts)
        assert decode_control(encode_control(fb)) == fb

    def test_padding_must_be_zero(self):
        raw = bytearray(Feedback(1, (True, False, True)).to_bytes())
        raw[6] |= 0x01
        with pytest.raises(WireError):
            Feedback.from_bytes(bytes(raw))

    def test_resend(self):
        assert decode_control(encode_control(ResendRequest(77))) == ResendRequest(77)
        with pytest.raises(WireError):
            decode_control(b"X1234")
        with pytest.raises(WireError):
            decode_control(b"")
