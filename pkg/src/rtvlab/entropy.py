"""Per-packet range coding under per-channel discretized Laplace models.

Every packet carries its own model header, so any packet decodes without the
others. Scales travel as 12-bit log-domain codes: ``b = 2**(code/256 - 4)``,
covering 1/16 .. ~4096 with 256 steps per octave.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit

ALPHABET_MIN, ALPHABET_MAX = -1024, 1023
ALPHABET = ALPHABET_MAX - ALPHABET_MIN + 1
PROB_BITS = 16
TOTAL = 1 << PROB_BITS
MIN_SCALE = 1 / 16
SCALE_CODE_BITS = 12
HEADER_BUDGET = 64
SCALE_GROUPS = 16

_TOP = 1 << 24


class EntropyError(ValueError):
    pass


class TruncatedStream(EntropyError):
    def __init__(self, symbol_index: int):
        super().__init__(f"stream truncated while decoding symbol {symbol_index}")
        self.symbol_index = symbol_index


class CorruptStream(EntropyError):
    def __init__(self, symbol_index: int):
        super().__init__(f"stream inconsistent with model at symbol {symbol_index}")
        self.symbol_index = symbol_index


# ---------------------------------------------------------------- models


def scale_to_code(b: float) -> int:
    b = max(float(b), MIN_SCALE)
    return int(min(max(round(256 * (math.log2(b) + 4)), 0), (1 << SCALE_CODE_BITS) - 1))


def code_to_scale(code: int) -> float:
    return 2.0 ** (code / 256 - 4)


@lru_cache(maxsize=None)
def _cum_table(code: int) -> np.ndarray:
    b = code_to_scale(code)
    s = np.arange(ALPHABET_MIN, ALPHABET_MAX + 1, dtype=np.float64)

    def cdf(x):
        return np.where(x < 0, 0.5 * np.exp(np.minimum(x, 0) / b), 1 - 0.5 * np.exp(-np.maximum(x, 0) / b))

    upper = cdf(s + 0.5)
    lower = cdf(s - 0.5)
    upper[-1] = 1.0
    lower[0] = 0.0
    p = np.clip(upper - lower, 0.0, 1.0)
    freq = 1 + np.floor(p * (TOTAL - ALPHABET)).astype(np.int64)
    freq[-ALPHABET_MIN] += TOTAL - int(freq.sum())
    cum = np.zeros(ALPHABET + 1, dtype=np.int32)
    cum[1:] = np.cumsum(freq)
    assert cum[-1] == TOTAL
    cum.flags.writeable = False
    return cum


@dataclass(frozen=True)
class LaplaceModel:
    """Per-channel scale codes; ``groups > 0`` means channels share ``groups`` scales."""

    codes: tuple
    groups: int = 0

    def __post_init__(self):
        if not self.codes:
            raise EntropyError("model needs at least one channel")
        if any(not 0 <= c < (1 << SCALE_CODE_BITS) for c in self.codes):
            raise EntropyError("scale code outside 12-bit range")

    @property
    def channels(self) -> int:
        return len(self.codes)

    @property
    def scales(self) -> np.ndarray:
        return np.array([code_to_scale(c) for c in self.codes])

    def cum_tables(self) -> np.ndarray:
        return _stacked(self.codes)


@lru_cache(maxsize=256)
def _stacked(codes: tuple) -> np.ndarray:
    return np.ascontiguousarray(np.stack([_cum_table(c) for c in codes]))


def group_of(channel, channels: int, groups: int):
    return (np.asarray(channel) * groups) // channels


def _full_header_len(channels: int) -> int:
    return len(_varint(channels)) + 1 + (channels * SCALE_CODE_BITS + 7) // 8


def fit_model(tensor, budget: int = HEADER_BUDGET) -> LaplaceModel:
    """Laplace MLE per channel (mean |v|, floored at 1/16).

    When per-channel scales would not fit the header budget, channels are
    pooled into 16 contiguous groups sharing one scale each.
    """
    t = np.asarray(tensor)
    if t.size == 0:
        raise EntropyError("cannot fit a model to an empty tensor")
    if t.ndim == 1:
        t = t[None, :]
    mags = np.abs(t.reshape(t.shape[0], -1).astype(np.float64))
    C = mags.shape[0]
    if _full_header_len(C) <= budget:
        codes = tuple(scale_to_code(max(m.mean(), MIN_SCALE)) for m in mags)
        return LaplaceModel(codes, 0)
    G = min(SCALE_GROUPS, C)
    g = group_of(np.arange(C), C, G)
    sums = np.bincount(g, weights=mags.sum(axis=1), minlength=G)
    cnts = np.bincount(g, minlength=G) * mags.shape[1]
    gcodes = [scale_to_code(max(s / c, MIN_SCALE)) for s, c in zip(sums, cnts)]
    return LaplaceModel(tuple(gcodes[k] for k in g), G)


def _varint(v: int) -> bytes:
    out = bytearray()
    while True:
        b = v & 0x7F
        v >>= 7
        if v:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def _read_varint(buf: bytes, pos: int):
    v = shift = 0
    while True:
        if pos >= len(buf):
            raise EntropyError("truncated varint in model header")
        b = buf[pos]
        pos += 1
        v |= (b & 0x7F) << shift
        if not b & 0x80:
            return v, pos
        shift += 7
        if shift > 28:
            raise EntropyError("varint too long in model header")


def serialize_model(model: LaplaceModel, budget: int = HEADER_BUDGET) -> bytes:
    """``varint(channels) | groups byte | 12-bit codes, MSB-first, zero padded``."""
    C = model.channels
    if model.groups:
        G = model.groups
        g = group_of(np.arange(C), C, G)
        firsts = [int(np.argmax(g == k)) for k in range(G)]
        codes = [model.codes[i] for i in firsts]
    else:
        G = 0
        codes = list(model.codes)
    bits = 0
    nbits = 0
    body = bytearray()
    for c in codes:
        bits = (bits << SCALE_CODE_BITS) | c
        nbits += SCALE_CODE_BITS
        while nbits >= 8:
            nbits -= 8
            body.append((bits >> nbits) & 0xFF)
    if nbits:
        body.append((bits << (8 - nbits)) & 0xFF)
    out = _varint(C) + bytes([G]) + bytes(body)
    if len(out) > budget:
        raise EntropyError(f"model header of {len(out)} bytes exceeds the {budget}-byte budget")
    return out


def deserialize_model(buf: bytes) -> tuple:
    """Returns ``(model, bytes_consumed)``."""
    C, pos = _read_varint(buf, 0)
    if C == 0:
        raise EntropyError("model header declares zero channels")
    if pos >= len(buf):
        raise EntropyError("truncated model header")
    G = buf[pos]
    pos += 1
    n = G if G else C
    if G > C:
        raise EntropyError("more scale groups than channels")
    need = (n * SCALE_CODE_BITS + 7) // 8
    if pos + need > len(buf):
        raise EntropyError("truncated model header")
    bits = int.from_bytes(buf[pos:pos + need], "big")
    pad = need * 8 - n * SCALE_CODE_BITS
    if bits & ((1 << pad) - 1):
        raise EntropyError("non-zero padding in model header")
    bits >>= pad
    codes = [(bits >> (SCALE_CODE_BITS * (n - 1 - k))) & 0xFFF for k in range(n)]
    if G:
        g = group_of(np.arange(C), C, G)
        codes = [codes[k] for k in g]
    return LaplaceModel(tuple(int(c) for c in codes), G), pos + need


# ---------------------------------------------------------------- range coder kernels


@njit(cache=True)
def _shift_low(low, cache, cache_size, out, pos):
    # LZMA-style carry handling; pos == -1 swallows the always-zero leading byte
    if low < np.uint64(0xFF000000) or low > np.uint64(0xFFFFFFFF):
        carry = low >> np.uint64(32)
        temp = cache
        while cache_size > 0:
            if pos >= 0:
                out[pos] = (temp + carry) & np.uint64(0xFF)
            pos += 1
            temp = np.uint64(0xFF)
            cache_size -= 1
        cache = (low >> np.uint64(24)) & np.uint64(0xFF)
    cache_size += 1
    low = (low & np.uint64(0x00FFFFFF)) << np.uint64(8)
    return low, cache, cache_size, pos


@njit(cache=True)
def _rc_encode(symbols, tables, cums):
    n = symbols.shape[0]
    out = np.zeros(2 * n + 16, dtype=np.uint8)
    pos = -1
    low = np.uint64(0)
    rng = np.uint64(0xFFFFFFFF)
    cache = np.uint64(0)
    cache_size = 1
    for k in range(n):
        s = symbols[k]
        t = tables[k]
        start = np.uint64(cums[t, s])
        size = np.uint64(cums[t, s + 1]) - start
        rng = rng >> np.uint64(16)
        low += start * rng
        rng *= size
        while rng < np.uint64(_TOP):
            rng = rng << np.uint64(8)
            low, cache, cache_size, pos = _shift_low(low, cache, cache_size, out, pos)
    for _ in range(5):
        low, cache, cache_size, pos = _shift_low(low, cache, cache_size, out, pos)
    return out[:pos]


@njit(cache=True)
def _rc_decode(data, tables, cums, n, out):
    """Returns -1 on success, else ``symbol_index * 2 + kind`` (kind 0 truncated, 1 corrupt)."""
    pos = 0
    size_in = data.shape[0]
    code = np.uint64(0)
    rng = np.uint64(0xFFFFFFFF)
    for _ in range(4):
        if pos >= size_in:
            return 0
        code = (code << np.uint64(8)) | np.uint64(data[pos])
        pos += 1
    for k in range(n):
        t = tables[k]
        rng = rng >> np.uint64(16)
        value = code // rng
        if value >= np.uint64(65536):
            return k * 2 + 1
        lo = 0
        hi = cums.shape[1] - 1
        v = np.int64(value)
        while hi - lo > 1:
            mid = (lo + hi) >> 1
            if cums[t, mid] <= v:
                lo = mid
            else:
                hi = mid
        start = np.uint64(cums[t, lo])
        size = np.uint64(cums[t, lo + 1]) - start
        code -= start * rng
        rng *= size
        out[k] = lo
        while rng < np.uint64(_TOP):
            if pos >= size_in:
                return k * 2
            code = (code << np.uint64(8)) | np.uint64(data[pos])
            rng = rng << np.uint64(8)
            pos += 1
    if pos != size_in:
        return n * 2 + 1
    return -1


# ---------------------------------------------------------------- packet API


def _prepare(elements, channels, model: LaplaceModel):
    v = np.asarray(elements, dtype=np.int64).reshape(-1)
    ch = np.asarray(channels, dtype=np.int64).reshape(-1)
    if v.size != ch.size:
        raise EntropyError("one channel id per element required")
    if v.size and (v.min() < ALPHABET_MIN or v.max() > ALPHABET_MAX):
        raise EntropyError("symbol outside [-1024, 1023]; the encoder must clamp upstream")
    if ch.size and (ch.min() < 0 or ch.max() >= model.channels):
        raise EntropyError("element channel not covered by the model")
    return (v - ALPHABET_MIN).astype(np.int32), ch.astype(np.int32)


def encode_packet(elements, channels, model: LaplaceModel) -> bytes:
    sym, tab = _prepare(elements, channels, model)
    if sym.size == 0:
        return b""
    return _rc_encode(sym, tab, model.cum_tables()).tobytes()


def decode_packet(data: bytes, model: LaplaceModel, channels) -> np.ndarray:
    """Decode ``len(channels)`` symbols; the count comes from the packetization map."""
    ch = np.asarray(channels, dtype=np.int32).reshape(-1)
    n = ch.size
    if n == 0:
        if data:
            raise CorruptStream(0)
        return np.zeros(0, dtype=np.int16)
    if ch.min() < 0 or ch.max() >= model.channels:
        raise EntropyError("element channel not covered by the model")
    out = np.zeros(n, dtype=np.int32)
    buf = np.frombuffer(bytes(data), dtype=np.uint8)
    status = _rc_decode(buf, ch, model.cum_tables(), n, out)
    if status >= 0:
        idx, kind = divmod(int(status), 2)
        raise (CorruptStream if kind else TruncatedStream)(idx)
    return (out + ALPHABET_MIN).astype(np.int16)


def cross_entropy_bits(elements, channels, model: LaplaceModel) -> float:
    """Ideal code length of the elements under the model, in bits."""
    sym, tab = _prepare(elements, channels, model)
    cums = model.cum_tables()
    freq = cums[tab, sym + 1] - cums[tab, sym]
    return float(np.sum(PROB_BITS - np.log2(freq)))
