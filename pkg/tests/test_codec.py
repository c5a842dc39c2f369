import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.fft import dctn

from rtvlab.codec import core
from rtvlab.codec.core import QualityLevel, Reception, ReferenceState
from rtvlab.media import Frame, SyntheticSpec, synth_frame, synth_sequence
from rtvlab.metrics import psnr
from rtvlab.transport import framing


def brute_force_mv(cur, ref, R=8):
    """Exhaustive SAD search on an edge-extended reference with the documented tie-break."""
    h, w = cur.shape
    pad = np.pad(ref.astype(np.int64), R, mode="edge")
    out = np.zeros((2, h // 16, w // 16), dtype=np.int64)
    for by in range(h // 16):
        for bx in range(w // 16):
            blk = cur[by * 16:by * 16 + 16, bx * 16:bx * 16 + 16].astype(np.int64)
            best = None
            for dy in range(-R, R + 1):
                for dx in range(-R, R + 1):
                    y, x = by * 16 + dy + R, bx * 16 + dx + R
                    sad = int(np.abs(blk - pad[y:y + 16, x:x + 16]).sum())
                    key = (sad, abs(dx) + abs(dy), dy, dx)
                    if best is None or key < best:
                        best = key
            out[:, by, bx] = best[3], best[2]
    return out


class TestLadder:
    def test_eleven_rungs_strictly_finer(self):
        steps = [QualityLevel(r).step_q8 for r in range(core.RUNGS)]
        assert core.RUNGS == 11
        assert all(a > b for a, b in zip(steps, steps[1:]))

    def test_step_formula(self):
        for r in range(core.RUNGS):
            assert QualityLevel(r).step_q8 == round(256 * 64 * 2 ** (-r / 2))

    def test_rung_out_of_range(self):
        with pytest.raises(ValueError):
            QualityLevel(11)


class TestIntra:
    def test_mid_grey_is_all_zero(self, flat_frame):
        enc = core.encode_i(flat_frame(128))
        assert not enc.residual.values.any()

    def test_constant_255_dc_only(self, flat_frame):
        rung = next(r for r in range(core.RUNGS) if QualityLevel(r).step == 16)
        enc = core.encode_i(flat_frame(255), rung)
        v = enc.residual.values
        # orthonormal 8x8 DCT-II of a constant block c: DC = 8c
        block = np.full((8, 8), 255.0 - 128)
        dc = dctn(block, norm="ortho")[0, 0]
        expected = int(np.floor(dc / 16 + 0.5))
        assert np.all(v[0] == expected) and expected == 64
        assert not v[1:].any()

    def test_channel_major_zigzag_layout(self):
        img = np.full((16, 16), 128, np.uint8)
        img[:, ::2] = 160  # horizontal alternation -> energy at (0, 7)
        enc = core.encode_i(Frame.from_luma(img), core.FINEST)
        v = enc.residual.values
        assert v.shape == (64, 2, 2)
        hot = {int(c) for c in np.nonzero(np.abs(v).sum(axis=(1, 2)))[0]}
        from rtvlab.codec.kernels import ZIGZAG
        assert {int(ZIGZAG[c]) for c in hot} >= {7}

    def test_finest_psnr_textured(self):
        f = synth_frame(SyntheticSpec(width=128, height=96), 0)
        assert psnr(f, core.decode(core.encode_i(f, core.FINEST))) >= 40

    def test_values_clamped(self, flat_frame):
        f = flat_frame(0)
        enc = core.encode_i(f, core.FINEST)
        assert enc.residual.values.min() >= -1024 and enc.residual.values.max() <= 1023


class TestMotion:
    def test_identical_frame(self, small_clip):
        f = small_clip[0]
        ref = ReferenceState(0, f)
        enc = core.encode_p(f, ref, core.FINEST, 1)
        assert not enc.mv.values.any()
        assert not enc.residual.values.any()

    def test_shifted_gradient(self):
        spec = SyntheticSpec("moving-gradient", 96, 64, velocity=(2, 0))
        a, b = synth_frame(spec, 0), synth_frame(spec, 1)
        enc = core.encode_p(b, ReferenceState(0, a), core.FINEST, 1)
        interior = enc.mv.values[:, :, 1:-1]
        assert np.all(interior[0] == -2) and np.all(interior[1] == 0)

    def test_matches_brute_force(self, small_clip):
        cur, ref = small_clip[3].luma, small_clip[2].luma
        enc = core.encode_p(small_clip[3], ReferenceState(2, small_clip[2]), core.FINEST, 3)
        assert np.array_equal(enc.mv.values, brute_force_mv(cur, ref))

    def test_dimension_mismatch(self, small_clip, flat_frame):
        with pytest.raises(core.CodecError):
            core.encode_p(small_clip[0], ReferenceState(0, flat_frame(0, 32, 32)), core.FINEST, 1)

    def test_rung_size_and_quality_monotone(self, small_clip):
        ref = core.lossless_reference(core.encode_i(small_clip[0]), None)
        lo = core.encode_p(small_clip[1], ref, 0, 1)
        hi = core.encode_p(small_clip[1], ref, 10, 1)
        assert framing.estimate_frame_bytes(hi) > framing.estimate_frame_bytes(lo)
        assert psnr(small_clip[1], core.decode(hi, ref)) > psnr(small_clip[1], core.decode(lo, ref))


class TestDecode:
    def test_no_mask_identity(self, small_clip):
        ref = core.lossless_reference(core.encode_i(small_clip[0]), None)
        enc = core.encode_p(small_clip[1], ref, 6, 1)
        assert core.decode(enc, ref, Reception.full(enc)).same_pixels(core.decode(enc, ref))

    def test_full_residual_loss_zero_motion(self, small_clip):
        spec = SyntheticSpec(width=64, height=48, velocity=(0, 0))
        a, b = synth_frame(spec, 0), synth_frame(spec, 1)
        ref = ReferenceState(0, a)
        enc = core.encode_p(b, ref, core.FINEST, 1)
        rec = Reception(enc.mv.values, np.zeros_like(enc.residual.values), False)
        assert np.array_equal(core.decode(enc, ref, rec).luma, a.luma)

    def test_half_mask_between_extremes(self, rng):
        f = synth_frame(SyntheticSpec(width=64, height=48), 0)
        enc = core.encode_i(f, core.FINEST)
        full = psnr(f, core.decode(enc))
        none = psnr(f, core.decode(enc, None, Reception.nothing(enc)))
        for _ in range(20):
            keep = rng.permutation(enc.residual.size) >= enc.residual.size // 2
            vals = np.where(keep.reshape(enc.residual.values.shape), enc.residual.values, 0)
            q = psnr(f, core.decode(enc, None, Reception(None, vals, False)))
            assert none < q < full

    def test_p_without_reference(self, small_clip):
        ref = core.lossless_reference(core.encode_i(small_clip[0]), None)
        enc = core.encode_p(small_clip[1], ref, 5, 1)
        with pytest.raises(core.CodecError):
            core.decode(enc, None)

    def test_deterministic(self, small_clip):
        ref = core.lossless_reference(core.encode_i(small_clip[0]), None)
        enc = core.encode_p(small_clip[1], ref, 5, 1)
        assert core.decode(enc, ref).same_pixels(core.decode(enc, ref))

    def test_degradation_monotone_in_expectation(self, rng):
        f = synth_frame(SyntheticSpec(width=64, height=48), 0)
        enc = core.encode_i(f, 7)
        means = []
        for rate in np.arange(0, 0.9, 0.1):
            vals = []
            for _ in range(20):
                keep = rng.random(enc.residual.size) >= rate
                v = np.where(keep.reshape(enc.residual.values.shape), enc.residual.values, 0)
                vals.append(psnr(f, core.decode(enc, None, Reception(None, v, False))))
            means.append(np.mean(vals))
        assert all(b <= a + 0.3 for a, b in zip(means, means[1:]))


class TestRequantize:
    def test_same_rung_identical(self, small_clip):
        ref = core.lossless_reference(core.encode_i(small_clip[0]), None)
        enc = core.encode_p(small_clip[1], ref, 5, 1)
        again = core.requantize_residual(enc, 5)
        assert np.array_equal(again.residual.values, enc.residual.values)
        assert np.array_equal(again.mv.values, enc.mv.values)

    def test_sizes_follow_ladder(self, small_clip):
        ref = core.lossless_reference(core.encode_i(small_clip[0]), None)
        enc = core.encode_p(small_clip[1], ref, 10, 1)
        sizes = [framing.estimate_stream_bytes(core.requantize_residual(enc, r)) for r in range(core.RUNGS)]
        assert all(a <= b for a, b in zip(sizes, sizes[1:]))

    def test_zero_residual_floor(self, small_clip):
        ref = ReferenceState(0, small_clip[0])
        enc = core.encode_p(small_clip[0], ref, 10, 1)
        coarse = core.requantize_residual(enc, 0)
        assert framing.estimate_stream_bytes(coarse) == framing.estimate_stream_bytes(enc)

    def test_evicted_raw(self, small_clip):
        ref = core.lossless_reference(core.encode_i(small_clip[0]), None)
        enc = core.encode_p(small_clip[1], ref, 5, 1).drop_raw()
        with pytest.raises(core.CodecError):
            core.requantize_residual(enc, 3)


class TestFastRedecode:
    def _chain(self, clip, n, ipatch_k=None):
        ref0 = core.lossless_reference(core.encode_i(clip[0]), None)
        ref, encs = ref0, []
        for i in range(1, n + 1):
            e = core.encode_p(clip[i], ref, 6, i, ipatch_k=ipatch_k)
            encs.append(e)
            ref = core.lossless_reference(e, ref)
        return ref0, encs, ref

    def test_all_received_matches_optimistic(self, small_clip):
        ref0, encs, opt = self._chain(small_clip, 4)
        out = core.fast_redecode([(e, Reception.full(e)) for e in encs], ref0)
        assert out.frame.same_pixels(opt.frame) and out.frame_id == 4

    def test_incomplete_then_complete(self, small_clip, rng):
        ref0, encs, _ = self._chain(small_clip, 3)
        keep = rng.random(encs[0].residual.size) > 0.3
        lossy = Reception(encs[0].mv.values,
                          np.where(keep.reshape(encs[0].residual.values.shape), encs[0].residual.values, 0), True)
        chain = [(encs[0], lossy), (encs[1], Reception.full(encs[1])), (encs[2], Reception.full(encs[2]))]
        # receiver side, decoded independently
        r = ReferenceState(1, core.decode(encs[0], ref0, lossy))
        r = ReferenceState(2, core.decode(encs[1], r))
        r = ReferenceState(3, core.decode(encs[2], r))
        assert core.fast_redecode(chain, ref0).frame.same_pixels(r.frame)

    def test_abandoned_frame_keeps_reference(self, small_clip):
        ref0, encs, _ = self._chain(small_clip, 2)
        out = core.fast_redecode([(encs[0], None)], ref0)
        assert out.frame.same_pixels(ref0.frame) and out.frame_id == encs[0].frame_id

    def test_window_exceeded(self, small_clip):
        ref0, encs, _ = self._chain(small_clip, 3)
        with pytest.raises(core.CodecError):
            core.fast_redecode([(e, Reception.full(e)) for e in encs], ref0, window=2)

    def test_cheaper_than_encode(self):
        clip = synth_sequence(SyntheticSpec(width=320, height=192), 8).frames
        ref0, encs, _ = self._chain(clip, 7)
        chain = [(e, Reception.full(e)) for e in encs]
        t0 = time.perf_counter()
        for _ in range(3):
            core.fast_redecode(chain, ref0)
        redecode = (time.perf_counter() - t0) / 3
        t0 = time.perf_counter()
        ref = ref0
        for i, e in enumerate(encs, 1):
            core.encode_p(clip[i], ref, 6, i)
        encode = time.perf_counter() - t0
        assert redecode <= 0.5 * encode


class TestIPatch:
    def test_partition_k10(self):
        dims = (320, 160)
        mask = np.zeros((160, 320), int)
        for i in range(10):
            (x, y, w, h), k = core.ipatch_region(i, dims, 10)
            assert k == 10
            mask[y:y + h, x:x + w] += 1
        assert np.all(mask == 1)

    def test_periodic(self):
        dims = (640, 352)
        k = core.ipatch_region(0, dims, 30)[1]
        assert core.ipatch_region(7, dims, 30) == core.ipatch_region(7 + k, dims, 30)

    def test_720p_k30_aligned_equal(self):
        rects = [core.ipatch_region(i, (1280, 720), 30)[0] for i in range(30)]
        assert all(x % 16 == 0 and y % 16 == 0 and w % 16 == 0 and h % 16 == 0 for x, y, w, h in rects)
        areas = {w * h for _, _, w, h in rects}
        assert max(areas) - min(areas) <= 1280 * 16

    def test_infeasible_k_falls_back(self):
        rect, k = core.ipatch_region(0, (64, 48), 30)
        assert k <= 30 and k == core.feasible_patch_count((64, 48), 30)

    def test_k_out_of_range(self):
        with pytest.raises(ValueError):
            core.ipatch_region(0, (640, 352), 40)

    @given(st.integers(1, 40), st.integers(1, 30), st.integers(10, 30), st.integers(0, 500))
    @settings(max_examples=60, deadline=None)
    def test_window_covers_exactly_once(self, mbw, mbh, k, start):
        dims = (16 * mbw, 16 * mbh)
        kk = core.ipatch_region(0, dims, k)[1]
        cover = np.zeros((dims[1], dims[0]), int)
        for i in range(start, start + kk):
            (x, y, w, h), _ = core.ipatch_region(i, dims, k)
            cover[y:y + h, x:x + w] += 1
        assert np.all(cover == 1)

    def test_patch_refreshes_region(self, small_clip):
        ref = ReferenceState(0, Frame.from_luma(np.zeros((48, 64), np.uint8)))
        enc = core.encode_p(small_clip[1], ref, core.FINEST, 1, ipatch_k=10)
        x, y, w, h = enc.ipatch.rect
        out = core.decode(enc, ref)
        inside = psnr(small_clip[1].luma[y:y + h, x:x + w], out.luma[y:y + h, x:x + w])
        assert inside >= 40


class TestCache:
    def test_oldest_first(self):
        c = core.TensorCache(3)
        for i in range(5):
            c.put(i, i)
        assert c.ids() == [2, 3, 4]
        c.drop_through(3)
        assert c.ids() == [4]


def test_patch_rect_rejects_non_tiling_count():
    with pytest.raises(ValueError):
        core.patch_rect(0, (96, 64), 5)
    assert core.patch_rect(3, (96, 64), 8) == core.ipatch_region(3, (96, 64), 10)[0]
