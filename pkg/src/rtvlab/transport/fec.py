"""Systematic Reed-Solomon erasure code over GF(256) (Cauchy construction).

Any ``k`` of the ``k + r`` shards rebuild the source. Redundancy ``R`` is the
parity share of transmitted packets, so ``r = ceil(k * R / (1 - R))`` and a
frame survives a packet loss fraction up to ``R``.
"""

from __future__ import annotations

import math
from collections import deque

import numpy as np

_PRIM = 0x11D


def _tables():
    exp = np.zeros(512, dtype=np.int64)
    log = np.zeros(256, dtype=np.int64)
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        x <<= 1
        if x & 0x100:
            x ^= _PRIM
    exp[255:510] = exp[:255]
    mul = np.zeros((256, 256), dtype=np.uint8)
    a = np.arange(1, 256)
    for v in range(1, 256):
        mul[v, 1:] = exp[log[v] + log[a]]
    return exp, log, mul


EXP, LOG, MUL = _tables()


class FECError(ValueError):
    pass


def gf_inv(a: int) -> int:
    if a == 0:
        raise ZeroDivisionError("zero has no inverse in GF(256)")
    return int(EXP[255 - LOG[a]])


def gf_mul(a: int, b: int) -> int:
    return int(MUL[a, b])


def cauchy_row(i: int, k: int) -> np.ndarray:
    """Coefficients of parity shard ``i``: 1 / (x_i + y_j), x_i = k + i, y_j = j."""
    return np.array([gf_inv((k + i) ^ j) for j in range(k)], dtype=np.uint8)


def _row(index: int, k: int) -> np.ndarray:
    if index < k:
        r = np.zeros(k, dtype=np.uint8)
        r[index] = 1
        return r
    return cauchy_row(index - k, k)


def _mat_inv(M: np.ndarray) -> np.ndarray:
    n = M.shape[0]
    A = M.astype(np.uint8).copy()
    I = np.eye(n, dtype=np.uint8)
    for col in range(n):
        piv = next((r for r in range(col, n) if A[r, col]), None)
        if piv is None:
            raise FECError("singular decoding matrix")
        if piv != col:
            A[[col, piv]] = A[[piv, col]]
            I[[col, piv]] = I[[piv, col]]
        inv = gf_inv(int(A[col, col]))
        A[col] = MUL[inv][A[col]]
        I[col] = MUL[inv][I[col]]
        for r in range(n):
            f = int(A[r, col])
            if r != col and f:
                A[r] ^= MUL[f][A[col]]
                I[r] ^= MUL[f][I[col]]
    return I


def parity_count(k: int, redundancy: float) -> int:
    if not 0 <= redundancy < 1:
        raise FECError("redundancy must be in [0, 1)")
    return int(math.ceil(k * redundancy / (1 - redundancy) - 1e-9))


def shard(data: bytes, k: int) -> tuple:
    """Split ``data`` into ``k`` equal zero-padded shards; returns (shards, shard_len)."""
    if k < 1:
        raise FECError("need at least one source shard")
    L = max(1, -(-len(data) // k))
    buf = np.zeros(k * L, dtype=np.uint8)
    buf[:len(data)] = np.frombuffer(data, dtype=np.uint8)
    return buf.reshape(k, L), L


def encode(data: bytes, k: int, r: int) -> list:
    """``k`` source shards followed by ``r`` parity shards, all equal length."""
    if k + r > 255:
        raise FECError("k + r must not exceed 255")
    src, L = shard(data, k)
    out = [bytes(s) for s in src]
    for i in range(r):
        coef = cauchy_row(i, k)
        acc = np.zeros(L, dtype=np.uint8)
        for j in range(k):
            if coef[j]:
                acc ^= MUL[coef[j]][src[j]]
        out.append(bytes(acc))
    return out


def decode(shards: dict, k: int, length: int) -> bytes:
    """Rebuild the source from ``{index: shard}``; needs at least ``k`` entries."""
    if len(shards) < k:
        raise FECError(f"only {len(shards)} of the {k} shards needed are present")
    idx = sorted(shards)[:k]
    if idx == list(range(k)):
        data = b"".join(shards[i] for i in idx)
        return data[:length]
    M = np.stack([_row(i, k) for i in idx])
    inv = _mat_inv(M)
    rows = np.stack([np.frombuffer(shards[i], dtype=np.uint8) for i in idx])
    L = rows.shape[1]
    src = np.zeros((k, L), dtype=np.uint8)
    for a in range(k):
        for b in range(k):
            c = inv[a, b]
            if c:
                src[a] ^= MUL[c][rows[b]]
    return src.reshape(-1).tobytes()[:length]


class RedundancyController:
    """Redundancy = highest per-frame loss rate seen in the trailing window, clamped."""

    def __init__(self, window_ms: float = 2000.0, floor: float = 0.1, cap: float = 0.5):
        self.window_ms = window_ms
        self.floor = floor
        self.cap = cap
        self.history: deque = deque()

    def observe(self, now_ms: float, loss_rate: float) -> None:
        self.history.append((now_ms, float(loss_rate)))
        self._expire(now_ms)

    def _expire(self, now_ms: float) -> None:
        while self.history and self.history[0][0] < now_ms - self.window_ms:
            self.history.popleft()

    def redundancy(self, now_ms: float) -> float:
        self._expire(now_ms)
        worst = max((r for _, r in self.history), default=0.0)
        return fec_update_R(worst, self.floor, self.cap)


def fec_update_R(max_loss: float, floor: float = 0.1, cap: float = 0.5) -> float:
    return min(cap, max(floor, float(max_loss)))
