"""Reversible element-to-packet assignment and zero-fill reassembly.

The ``random`` strategy sends element ``i`` to packet ``j = i*p mod n`` at
position ``(i*p - j) / n`` for a prime multiplier ``p``; losing a packet then
zeroes an evenly spread subset of the tensor. ``block`` and ``interleaved``
are comparators that obey the same bijection laws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

STRATEGIES = ("random", "block", "interleaved")
MIN_PACKETS = 2
MIN_MULTIPLIER = 16


class PacketizationError(ValueError):
    pass


def is_prime(v: int) -> bool:
    if v < 2:
        return False
    if v % 2 == 0:
        return v == 2
    f = 3
    while f * f <= v:
        if v % f == 0:
            return False
        f += 2
    return True


def choose_multiplier(m: int, n: int) -> int:
    """Smallest prime above max(n, 16) coprime with both n and m."""
    p = max(n, MIN_MULTIPLIER) + 1
    while not (is_prime(p) and math.gcd(p, n) == 1 and math.gcd(p, max(m, 1)) == 1):
        p += 1
    return p


@dataclass(frozen=True)
class PacketizationMap:
    m: int
    n: int
    p: int = 0
    strategy: str = "random"

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise PacketizationError(f"unknown strategy {self.strategy!r}")
        if self.m < 0:
            raise PacketizationError("element count must be non-negative")
        if self.n < MIN_PACKETS:
            raise PacketizationError(f"need at least {MIN_PACKETS} packets, got n={self.n}")
        if self.strategy == "random":
            p = self.p
            if not is_prime(p):
                raise PacketizationError(f"multiplier p={p} must be prime")
            if math.gcd(p, self.n) != 1 or math.gcd(p, max(self.m, 1)) != 1:
                raise PacketizationError(f"multiplier p={p} must be coprime with m and n")

    @classmethod
    def build(cls, m: int, n: int, strategy: str = "random") -> "PacketizationMap":
        p = choose_multiplier(m, n) if strategy == "random" else 0
        return cls(m, n, p, strategy)

    def assign(self, i: int) -> tuple:
        """(packet, position) of element ``i``."""
        if not 0 <= i < self.m:
            raise IndexError(f"element {i} outside [0, {self.m})")
        if self.strategy == "random":
            j = (i * self.p) % self.n
            return j, (i * self.p - j) // self.n
        if self.strategy == "block":
            j = (i * self.n) // self.m
            return j, i - self._block_start(j)
        return i % self.n, i // self.n

    def _block_start(self, j: int) -> int:
        # first i with floor(i*n/m) >= j
        return -((-j * self.m) // self.n)

    @cached_property
    def packet_of(self) -> np.ndarray:
        i = np.arange(self.m, dtype=np.int64)
        if self.strategy == "random":
            out = (i * self.p) % self.n
        elif self.strategy == "block":
            out = (i * self.n) // max(self.m, 1)
        else:
            out = i % self.n
        out.flags.writeable = False
        return out

    @cached_property
    def members(self) -> tuple:
        """Element indices of each packet, ordered by position."""
        order = np.argsort(self.packet_of, kind="stable")
        counts = np.bincount(self.packet_of, minlength=self.n)
        return tuple(np.split(order, np.cumsum(counts)[:-1]))

    def counts(self) -> np.ndarray:
        return np.bincount(self.packet_of, minlength=self.n)


def split(pmap: PacketizationMap, tensor) -> list:
    """Distribute a channel-major flattened tensor into ``n`` element lists."""
    flat = np.asarray(tensor).reshape(-1)
    if flat.size != pmap.m:
        raise PacketizationError(f"tensor has {flat.size} elements, map expects {pmap.m}")
    return [flat[idx] for idx in pmap.members]


def channel_ids(pmap: PacketizationMap, plane_size: int) -> list:
    """Channel of each element in each packet (channel-major layout)."""
    return [idx // plane_size for idx in pmap.members]


def merge(pmap: PacketizationMap, received, dtype=np.int16):
    """Inverse of :func:`split`; ``None`` entries are lost packets and zero-filled.

    Returns ``(flat_tensor, lost_fraction)``.
    """
    received = list(received)
    if len(received) != pmap.n:
        raise PacketizationError(f"expected {pmap.n} packet slots, got {len(received)}")
    if all(r is None for r in received):
        raise PacketizationError("no packet of this tensor arrived; request a resend")
    out = np.zeros(pmap.m, dtype=dtype)
    lost = 0
    for idx, elems in zip(pmap.members, received):
        if elems is None:
            lost += idx.size
            continue
        elems = np.asarray(elems)
        if elems.size != idx.size:
            raise PacketizationError(f"packet carries {elems.size} elements, map expects {idx.size}")
        out[idx] = elems
    return out, (lost / pmap.m if pmap.m else 0.0)


def loss_mask(pmap: PacketizationMap, lost_packets) -> np.ndarray:
    """Boolean keep-mask over elements when ``lost_packets`` are missing."""
    lost = np.zeros(pmap.n, dtype=bool)
    lost[list(lost_packets)] = True
    return ~lost[pmap.packet_of]
