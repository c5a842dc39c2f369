"""Integer transform and motion kernels (numba).

All decode-side arithmetic is integer so that a sender re-running the decoder
reproduces the receiver's pixels exactly.
"""

from __future__ import annotations

import numpy as np
from numba import njit

BLOCK = 8
MB = 16
BASIS_BITS = 14
FRAC_BITS = 8  # fractional bits kept between the two transform passes


def _basis() -> np.ndarray:
    u = np.arange(8)[:, None]
    x = np.arange(8)[None, :]
    c = np.where(u == 0, np.sqrt(1 / 8), 0.5)
    return np.rint(c * np.cos((2 * x + 1) * u * np.pi / 16) * (1 << BASIS_BITS)).astype(np.int64)


def _zigzag() -> np.ndarray:
    order = sorted(
        ((u, v) for u in range(8) for v in range(8)),
        key=lambda p: (p[0] + p[1], p[1] if (p[0] + p[1]) % 2 == 0 else p[0]),
    )
    return np.array([u * 8 + v for u, v in order], dtype=np.int64)


DCT_BASIS = _basis()
ZIGZAG = _zigzag()  # channel c holds raster coefficient ZIGZAG[c]


@njit(cache=True)
def _shift_round(x, s):
    return (x + (1 << (s - 1))) >> s


@njit(cache=True)
def fdct_blocks(img, A, zz):
    """Forward 8x8 DCT of an int image -> (64, H/8, W/8) coefficients scaled by 2^22."""
    h, w = img.shape
    br, bc = h // 8, w // 8
    out = np.zeros((64, br, bc), dtype=np.int64)
    sh1 = 14 - 8
    tmp = np.zeros((8, 8), dtype=np.int64)
    coef = np.zeros(64, dtype=np.int64)
    for by in range(br):
        for bx in range(bc):
            y0 = by * 8
            x0 = bx * 8
            # rows: tmp = A @ blk
            for u in range(8):
                for x in range(8):
                    acc = 0
                    for y in range(8):
                        acc += A[u, y] * img[y0 + y, x0 + x]
                    tmp[u, x] = _shift_round(acc, sh1)
            for u in range(8):
                for v in range(8):
                    acc = 0
                    for x in range(8):
                        acc += tmp[u, x] * A[v, x]
                    coef[u * 8 + v] = acc
            for c in range(64):
                out[c, by, bx] = coef[zz[c]]
    return out


@njit(cache=True)
def idct_blocks(values, steps_q8, A, zz):
    """Dequantize and inverse-transform (64, R, C) coefficients to an int32 image."""
    nc, br, bc = values.shape
    out = np.zeros((br * 8, bc * 8), dtype=np.int32)
    d = np.zeros((8, 8), dtype=np.int64)
    tmp = np.zeros((8, 8), dtype=np.int64)
    for by in range(br):
        for bx in range(bc):
            nz = False
            for c in range(nc):
                if values[c, by, bx] != 0:
                    nz = True
                    break
            if not nz:
                continue
            for c in range(64):
                d[zz[c] // 8, zz[c] % 8] = 0
            for c in range(nc):
                k = zz[c]
                d[k // 8, k % 8] = np.int64(values[c, by, bx]) * steps_q8[c]
            # tmp = A^T @ d   (scale 2^22 -> 2^8)
            for x in range(8):
                for v in range(8):
                    acc = 0
                    for u in range(8):
                        acc += A[u, x] * d[u, v]
                    tmp[x, v] = _shift_round(acc, 14)
            # pix = tmp @ A  (scale 2^22 -> integer)
            for x in range(8):
                for y in range(8):
                    acc = 0
                    for v in range(8):
                        acc += tmp[x, v] * A[v, y]
                    out[by * 8 + x, bx * 8 + y] = _shift_round(acc, 22)
    return out


@njit(cache=True)
def quantize(raw, steps_q8, lo, hi):
    """Round raw (2^22-scaled) coefficients by per-channel steps, half away from zero."""
    nc, br, bc = raw.shape
    out = np.zeros((nc, br, bc), dtype=np.int16)
    for c in range(nc):
        d = np.int64(steps_q8[c]) << 14
        half = d >> 1
        for i in range(br):
            for j in range(bc):
                r = raw[c, i, j]
                if r >= 0:
                    q = (r + half) // d
                else:
                    q = -((-r + half) // d)
                if q < lo:
                    q = lo
                elif q > hi:
                    q = hi
                out[c, i, j] = q
    return out


@njit(cache=True)
def motion_search(cur, ref, R, offsets):
    """Full search over ``offsets`` (pre-sorted by tie-break order), minimizing SAD.

    Returns (2, rows, cols) int16: channel 0 = dx, channel 1 = dy. The vector
    points from the current block to its match in the edge-extended reference.
    """
    h, w = cur.shape
    rows, cols = h // 16, w // 16
    mv = np.zeros((2, rows, cols), dtype=np.int16)
    for by in range(rows):
        for bx in range(cols):
            y0 = by * 16
            x0 = bx * 16
            best = np.int64(1) << 40
            bdx = 0
            bdy = 0
            for o in range(offsets.shape[0]):
                dx = offsets[o, 0]
                dy = offsets[o, 1]
                sad = np.int64(0)
                for y in range(16):
                    ry = y0 + y + dy
                    if ry < 0:
                        ry = 0
                    elif ry >= h:
                        ry = h - 1
                    for x in range(16):
                        rx = x0 + x + dx
                        if rx < 0:
                            rx = 0
                        elif rx >= w:
                            rx = w - 1
                        diff = np.int64(cur[y0 + y, x0 + x]) - np.int64(ref[ry, rx])
                        sad += diff if diff >= 0 else -diff
                    if sad >= best:
                        break
                if sad < best:
                    best = sad
                    bdx = dx
                    bdy = dy
                    if best == 0:
                        break
            mv[0, by, bx] = bdx
            mv[1, by, bx] = bdy
    return mv


@njit(cache=True)
def motion_compensate(ref, mv):
    h, w = ref.shape
    rows, cols = mv.shape[1], mv.shape[2]
    out = np.empty((h, w), dtype=np.int32)
    for by in range(rows):
        for bx in range(cols):
            dx = np.int64(mv[0, by, bx])
            dy = np.int64(mv[1, by, bx])
            for y in range(16):
                ry = by * 16 + y + dy
                if ry < 0:
                    ry = 0
                elif ry >= h:
                    ry = h - 1
                for x in range(16):
                    rx = bx * 16 + x + dx
                    if rx < 0:
                        rx = 0
                    elif rx >= w:
                        rx = w - 1
                    out[by * 16 + y, bx * 16 + x] = ref[ry, rx]
    return out


def search_offsets(R: int) -> np.ndarray:
    """Candidate displacements in tie-break order: |dx|+|dy|, then dy, then dx."""
    cand = [(dx, dy) for dy in range(-R, R + 1) for dx in range(-R, R + 1)]
    cand.sort(key=lambda p: (abs(p[0]) + abs(p[1]), p[1], p[0]))
    return np.array(cand, dtype=np.int64)
