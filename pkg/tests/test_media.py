import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rtvlab.media import (
    BandwidthTrace,
    Frame,
    SyntheticSpec,
    TraceError,
    VideoSequence,
    Y4MError,
    dump_trace,
    dump_y4m,
    mahimahi_to_trace,
    pad_frame,
    pad_y4m_bytes,
    parse_trace,
    parse_y4m,
    resample_trace,
    synth_frame,
)


def _y4m(w, h, frames, colorspace="mono", signature=b"YUV4MPEG2"):
    head = signature + f" W{w} H{h} F25:1 Ip A1:1 C{colorspace}\n".encode()
    plane = w * h if colorspace == "mono" else w * h * 3 // 2
    body = b"".join(b"FRAME\n" + bytes([i % 256]) * plane for i in range(frames))
    return head + body


def reference_y4m_writer(frames, w, h):
    """Independent 4:2:0 writer used as the round-trip oracle."""
    out = io.BytesIO()
    out.write(f"YUV4MPEG2 W{w} H{h} F25:1 Ip A1:1 C420jpeg\n".encode())
    for y, u, v in frames:
        out.write(b"FRAME\n")
        out.write(y.tobytes() + u.tobytes() + v.tobytes())
    return out.getvalue()


class TestY4M:
    def test_mono_16x16(self):
        seq = parse_y4m(_y4m(16, 16, 3))
        assert len(seq.frames) == 3
        assert all(f.luma.size == 256 for f in seq.frames)

    def test_bad_signature_names_token(self):
        with pytest.raises(Y4MError, match="YUV4MPEG3"):
            parse_y4m(_y4m(16, 16, 1, signature=b"YUV4MPEG3"))

    def test_420_720p_round_trip(self, rng):
        w, h = 1280, 720
        planes = [(rng.integers(0, 256, (h, w), dtype=np.uint8),
                   rng.integers(0, 256, (h // 2, w // 2), dtype=np.uint8),
                   rng.integers(0, 256, (h // 2, w // 2), dtype=np.uint8)) for _ in range(2)]
        data = reference_y4m_writer(planes, w, h)
        seq = parse_y4m(data)
        assert len(seq.frames[0].planes) == 3
        assert seq.frames[0].planes[1].shape == (360, 640)
        assert np.array_equal(seq.frames[1].planes[2], planes[1][2])
        assert dump_y4m(seq).split(b"\n", 1)[1] == data.split(b"\n", 1)[1]

    def test_unaligned_rejected_with_pad_hint(self):
        with pytest.raises(Y4MError, match="pad"):
            parse_y4m(_y4m(20, 16, 1))

    def test_ten_bit_rejected(self):
        with pytest.raises(Y4MError):
            parse_y4m(_y4m(16, 16, 1, colorspace="420p10"))

    def test_pad_tool_makes_loadable(self):
        padded = pad_y4m_bytes(_y4m(20, 18, 2))
        seq = parse_y4m(padded)
        assert (seq.width, seq.height) == (32, 32)

    def test_pad_frame_noop_when_aligned(self):
        f = Frame.from_luma(np.zeros((16, 32), np.uint8))
        assert pad_frame(f).same_pixels(f)


class TestTrace:
    def test_constant(self):
        t = parse_trace("0,8000000\n1,8000000")
        assert t.rates.size == 11
        assert np.all(t.rates == 8e6)

    def test_linear_interpolation(self):
        t = parse_trace("0,2000000\n1,4000000")
        assert t.rates[5] == pytest.approx(3e6)

    def test_range_preserved(self):
        t = parse_trace("time_s,bandwidth_bps\n# comment\n0,200000\n0.35,8000000\n1.2,3000000\n")
        assert t.rates.min() >= 0.2e6 and t.rates.max() <= 8e6

    def test_non_monotone_rejected(self):
        with pytest.raises(TraceError, match="increasing"):
            parse_trace("0,1\n1,1\n0.5,1")

    def test_negative_rate_rejected(self):
        with pytest.raises(TraceError, match="negative"):
            parse_trace("0,1\n1,-5")

    @given(st.lists(st.floats(0, 1e7), min_size=2, max_size=20))
    @settings(max_examples=50, deadline=None)
    def test_grid_samples_preserved(self, rates):
        times = [i / 10 for i in range(len(rates))]
        t = resample_trace(times, rates)
        assert np.allclose(t.rates, rates)

    def test_dump_parse_round_trip(self):
        t = BandwidthTrace.steps([(1, 8e6), (0.5, 2e6)])
        assert np.array_equal(parse_trace(dump_trace(t)).rates[: t.rates.size], t.rates)

    def test_mahimahi_conversion(self):
        t = mahimahi_to_trace(["0", "10", "150"], mtu=1500)
        assert t.rates[0] == 2 * 1500 * 8 * 10
        assert t.rates[1] == 1500 * 8 * 10


class TestSynthetic:
    def test_static_checkerboard(self):
        spec = SyntheticSpec("checkerboard", 64, 32, velocity=(0, 0))
        assert synth_frame(spec, 0).same_pixels(synth_frame(spec, 5))

    def test_gradient_translation(self):
        spec = SyntheticSpec("moving-gradient", 64, 32, velocity=(2, 0))
        a, b = synth_frame(spec, 0), synth_frame(spec, 1)
        assert np.array_equal(np.roll(a.luma, 2, axis=1), b.luma)

    def test_textured_deterministic(self):
        spec = SyntheticSpec(width=48, height=32, seed=7)
        assert synth_frame(spec, 3).same_pixels(synth_frame(SyntheticSpec(width=48, height=32, seed=7), 3))

    def test_unaligned_spec_rejected(self):
        with pytest.raises(ValueError):
            SyntheticSpec(width=50)

    def test_sequence_container(self):
        seq = VideoSequence([synth_frame(SyntheticSpec(width=32, height=32), 0)], 32, 32, 25.0, "mono")
        assert len(seq.frames) == 1
