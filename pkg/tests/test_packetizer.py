import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chi2_contingency

from rtvlab.packetizer import (
    PacketizationError,
    PacketizationMap,
    channel_ids,
    choose_multiplier,
    is_prime,
    loss_mask,
    merge,
    split,
)


def test_small_mapping_by_hand():
    pm = PacketizationMap(8, 4, 3)
    assert [pm.assign(i)[0] for i in range(8)] == [0, 3, 2, 1, 0, 3, 2, 1]
    assert list(pm.counts()) == [2, 2, 2, 2]


def test_positions_follow_formula():
    pm = PacketizationMap(8, 4, 3)
    for i in range(8):
        j, pos = pm.assign(i)
        assert pos == (i * 3 - j) // 4


def test_degenerate_multiplier_rejected():
    with pytest.raises(PacketizationError):
        PacketizationMap(8, 4, 1)
    with pytest.raises(PacketizationError):
        PacketizationMap(8, 4, 9)  # composite
    with pytest.raises(PacketizationError):
        PacketizationMap(8, 4, 2)  # shares a factor with n
    with pytest.raises(PacketizationError):
        PacketizationMap(8, 1, 3)


def test_assign_out_of_range():
    with pytest.raises(IndexError):
        PacketizationMap(8, 4, 3).assign(8)


def test_large_map_balanced():
    pm = PacketizationMap.build(10007, 24)
    # 10007 = 24*416 + 23, so the counts can only be 416 or 417
    counts = np.bincount([pm.assign(i)[0] for i in range(10007)], minlength=24)
    assert set(counts) == {416, 417}
    assert np.array_equal(counts, pm.counts())


def test_choose_multiplier():
    p = choose_multiplier(10007, 24)
    assert is_prime(p) and p > 24 and math.gcd(p, 24) == 1 and math.gcd(p, 10007) == 1
    assert choose_multiplier(8, 4) == 17


def test_packet_zero_order():
    pm = PacketizationMap(8, 4, 3)
    parts = split(pm, np.arange(8))
    assert list(parts[0]) == [0, 4]
    assert [list(p) for p in parts] == [[0, 4], [3, 7], [2, 6], [1, 5]]


def test_split_length_mismatch():
    with pytest.raises(PacketizationError):
        split(PacketizationMap(8, 4, 3), np.arange(9))


def test_lose_one_of_four():
    pm = PacketizationMap(8, 4, 3)
    parts = split(pm, np.arange(1, 9))
    parts[3] = None
    out, lost = merge(pm, parts)
    assert lost == 0.25
    assert list(np.nonzero(out == 0)[0]) == [1, 5]


def test_all_lost_is_error():
    pm = PacketizationMap(8, 4, 3)
    with pytest.raises(PacketizationError):
        merge(pm, [None] * 4)


def test_wrong_slot_count():
    pm = PacketizationMap(8, 4, 3)
    with pytest.raises(PacketizationError):
        merge(pm, split(pm, np.arange(8))[:3])


@pytest.mark.parametrize("n", [4, 10, 24, 64])
def test_zeroed_fraction_close_to_loss(n, rng):
    m = 5000
    pm = PacketizationMap.build(m, n)
    t = rng.integers(1, 100, m)
    for _ in range(20):
        parts = split(pm, t)
        for j in rng.choice(n, math.ceil(0.3 * n), replace=False):
            parts[j] = None
        out, lost = merge(pm, parts)
        frac = np.mean(out == 0)
        assert frac == pytest.approx(lost)
        assert 0.3 - 1 / n <= frac <= 0.3 + 1 / n


@pytest.mark.parametrize("strategy", ["random", "block", "interleaved"])
@given(m=st.integers(0, 3000), n=st.integers(2, 64), seed=st.integers(0, 2**32 - 1))
@settings(max_examples=80, deadline=None)
def test_bijection(strategy, m, n, seed):
    pm = PacketizationMap.build(m, n, strategy)
    t = np.random.default_rng(seed).integers(-1024, 1024, m).astype(np.int16)
    counts = pm.counts()
    assert counts.max() - counts.min() <= 1
    if m == 0:
        return
    out, lost = merge(pm, split(pm, t))
    assert lost == 0 and np.array_equal(out, t)
    pairs = {pm.assign(i) for i in range(min(m, 300))}
    assert len(pairs) == min(m, 300)


@given(m=st.integers(1, 3000), n=st.integers(2, 64), seed=st.integers(0, 2**32 - 1))
@settings(max_examples=80, deadline=None)
def test_loss_equals_masking(m, n, seed):
    r = np.random.default_rng(seed)
    pm = PacketizationMap.build(m, n)
    t = r.integers(-1024, 1024, m).astype(np.int16)
    lost = set(r.choice(n, r.integers(0, n), replace=False).tolist())
    parts = [None if j in lost else p for j, p in enumerate(split(pm, t))]
    out, _ = merge(pm, parts)
    expect = t.copy()
    for i in range(m):
        if pm.assign(i)[0] in lost:
            expect[i] = 0
    assert np.array_equal(out, expect)
    assert np.array_equal(out, np.where(loss_mask(pm, lost), t, 0))


def test_channel_mix_per_packet():
    # every packet sees the channels in the same proportions as the whole tensor
    C, plane = 32, 600
    pm = PacketizationMap.build(C * plane, 24)
    table = np.array([np.bincount(ch, minlength=C) for ch in channel_ids(pm, plane)])
    _, pval, _, _ = chi2_contingency(table)
    assert pval > 0.01
    block = PacketizationMap.build(C * plane, 24, "block")
    table = np.array([np.bincount(ch, minlength=C) for ch in channel_ids(block, plane)])
    assert chi2_contingency(table)[1] < 1e-6
