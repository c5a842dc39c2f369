"""Turning encoded frames into packets and back.

Two layouts share the wire header:

* per-tensor packetization: every coded tensor gets its own randomized
  element map and entropy model, so any subset of packets decodes;
* monolithic stream: all tensors entropy-coded back to back into one byte
  string that is only usable when complete (classic codec emulation).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from .. import entropy
from ..codec import core
from ..codec.core import CodedTensor, EncodedFrame, IPatch, QualityLevel, Reception
from ..packetizer import PacketizationMap, loss_mask, merge
from .wire import FIXED_HEADER, MTU, NO_REF, Packet, WireError

CE_MARGIN = 1.05


@lru_cache(maxsize=64)
def get_map(m: int, n: int, p: int = 0, strategy: str = "random") -> PacketizationMap:
    if strategy == "random" and p == 0:
        return PacketizationMap.build(m, n, strategy)
    return PacketizationMap(m, n, p, strategy)


@lru_cache(maxsize=16)
def _plane_channels(channels: int, plane: int) -> np.ndarray:
    ch = np.repeat(np.arange(channels, dtype=np.int32), plane)
    ch.flags.writeable = False
    return ch


def tensor_channels(t: CodedTensor) -> np.ndarray:
    return _plane_channels(t.channels, t.rows * t.cols)


def frame_tensors(enc: EncodedFrame) -> list:
    """``(group name, tensor)`` in wire order."""
    out = []
    if enc.mv is not None:
        out.append(("mv", enc.mv))
    out.append((enc.residual.kind, enc.residual))
    if enc.ipatch is not None:
        out.append(("patch", enc.ipatch.tensor))
    return out


def estimate_tensor_bytes(t: CodedTensor, mtu: int = MTU) -> float:
    """Wire bytes of one tensor from its ideal code length plus per-packet headers."""
    model = entropy.fit_model(t.values)
    mlen = len(entropy.serialize_model(model))
    body = entropy.cross_entropy_bits(t.flat(), tensor_channels(t), model) / 8 * CE_MARGIN
    n = spread_count(max(2, math.ceil(body / (mtu - FIXED_HEADER - mlen))), t.cols)
    return body + n * (FIXED_HEADER + mlen + 2)


def estimate_frame_bytes(enc: EncodedFrame, mtu: int = MTU) -> float:
    return sum(estimate_tensor_bytes(t, mtu) for _, t in frame_tensors(enc))


# ---------------------------------------------------------------- per-tensor packetization


@dataclass(frozen=True)
class TensorPlan:
    group: str
    tensor: CodedTensor
    pmap: PacketizationMap
    model: bytes
    payloads: tuple


def spread_count(n: int, cols: int) -> int:
    """Smallest packet count >= ``n`` that shares no factor with the row width.

    The element map sends index ``i`` to a packet determined by ``i mod n``,
    so a count dividing the row width would hand whole block columns (say,
    the poorly predicted frame edge) to a single packet.
    """
    while math.gcd(n, cols) != 1:
        n += 1
    return n


def plan_tensor(t: CodedTensor, group: str, mtu: int = MTU, strategy: str = "random") -> TensorPlan:
    model = entropy.fit_model(t.values)
    mbytes = entropy.serialize_model(model)
    budget = mtu - FIXED_HEADER - len(mbytes)
    flat = t.flat()
    ch = tensor_channels(t)
    ce = entropy.cross_entropy_bits(flat, ch, model) / 8 * CE_MARGIN + 16
    n = spread_count(max(2, math.ceil(ce / budget)), t.cols)
    while True:
        pmap = get_map(t.size, n, 0, strategy)
        payloads = tuple(entropy.encode_packet(flat[idx], ch[idx], model) for idx in pmap.members)
        worst = max(len(p) for p in payloads)
        if worst <= budget:
            return TensorPlan(group, t, pmap, mbytes, payloads)
        n = spread_count(max(n + 1, math.ceil(n * worst / budget * 1.02)), t.cols)
        if n > 0xFFFF:
            raise WireError("tensor needs more packets than the header can count")


def packetize(enc: EncodedFrame, scheme: str = "grace", mtu: int = MTU, strategy: str = "random"):
    """Packets for every tensor of ``enc`` plus the per-packet ``(group, slot)`` layout."""
    plans = [plan_tensor(t, g, mtu, strategy) for g, t in frame_tensors(enc)]
    total = sum(pl.pmap.n for pl in plans)
    ref = NO_REF if enc.reference_id is None else enc.reference_id
    packets, layout = [], []
    idx = 0
    for pl in plans:
        t = pl.tensor
        aux = enc.ipatch.k if pl.group == "patch" else 0
        for j, payload in enumerate(pl.payloads):
            packets.append(Packet(
                scheme, enc.frame_id, enc.frame_kind, idx, total, pl.group, t.channels, t.rows, t.cols,
                enc.rung, aux, pl.pmap.m, pl.pmap.n, pl.pmap.p, j, ref, pl.model, payload,
            ))
            layout.append((pl.group, j))
            idx += 1
    return packets, tuple(layout), {pl.group: pl.pmap for pl in plans}


def reception_from_bitmap(enc: EncodedFrame, layout, maps: dict, received) -> Optional[Reception]:
    """What the receiver decoded given its bitmap; None when nothing arrived."""
    if not any(received):
        return None
    lost: dict = {g: [] for g in maps}
    for (g, j), ok in zip(layout, received):
        if not ok:
            lost[g].append(j)

    def masked(t: CodedTensor, g: str):
        if not lost[g]:
            return t.values
        keep = loss_mask(maps[g], lost[g]).reshape(t.values.shape)
        return np.where(keep, t.values, 0).astype(np.int16)

    mv = None if enc.mv is None else masked(enc.mv, "mv")
    res = masked(enc.residual, enc.residual.kind)
    patch_ok = enc.ipatch is not None and not lost.get("patch")
    return Reception(mv, res, patch_ok)


def _steps(kind: str, rung: int, channels: int) -> tuple:
    if kind == "mv":
        return (core.MV_STEP_Q8,) * channels
    return (QualityLevel(rung).step_q8,) * channels


def assemble(packets, width: int, height: int):
    """Rebuild an :class:`EncodedFrame` from the packets of one frame.

    Lost elements are zero. Returns ``(enc, bitmap)``; packets whose payload
    fails to decode count as not received.
    """
    first = packets[0]
    count = first.packet_count
    received = [False] * count
    groups: dict = {}
    for p in packets:
        groups.setdefault(p.kind, []).append(p)
    tensors = {}
    for g, plist in groups.items():
        d = plist[0]
        pmap = get_map(d.m, d.n, d.p)
        if d.channels * d.rows * d.cols != d.m:
            raise WireError(f"descriptor of {g} tensor disagrees with its element count")
        model, used = entropy.deserialize_model(d.model)
        slots: list = [None] * pmap.n
        plane = d.rows * d.cols
        ok_slots = 0
        for p in plist:
            if p.slot >= pmap.n or (p.m, p.n, p.p) != (d.m, d.n, d.p):
                continue
            try:
                vals = entropy.decode_packet(p.payload, model, pmap.members[p.slot] // plane)
            except entropy.EntropyError:
                continue
            slots[p.slot] = vals
            received[p.packet_index] = True
            ok_slots += 1
        if ok_slots == 0:
            continue
        flat, _ = merge(pmap, slots)
        vals = flat.reshape(d.channels, d.rows, d.cols)
        kind = "intra" if g == "patch" else g
        tensors[g] = (CodedTensor(kind, vals, _steps(kind, d.rung, d.channels)), d, ok_slots == pmap.n)
    kind = first.frame_kind
    rung = first.rung
    if kind == "I":
        res_kind = "intra"
        mv = None
    else:
        res_kind = "residual"
        if "mv" in tensors:
            mv = tensors["mv"][0]
        else:
            mv = CodedTensor("mv", np.zeros((2, height // 16, width // 16), np.int16), (core.MV_STEP_Q8,) * 2)
    if res_kind in tensors:
        res = tensors[res_kind][0]
    else:
        res = CodedTensor(res_kind, np.zeros((64, height // 8, width // 8), np.int16),
                          _steps(res_kind, rung, 64))
    patch = None
    if "patch" in tensors and tensors["patch"][2]:
        t, d, _ = tensors["patch"]
        patch = IPatch(core.patch_rect(first.frame_id, (width, height), d.aux), t, d.aux)
    ref = None if first.ref_id == NO_REF else first.ref_id
    enc = EncodedFrame(first.frame_id, kind, width, height, rung, res, mv, patch, ref)
    return enc, tuple(received)


# ---------------------------------------------------------------- monolithic stream

_STREAM_HEAD = struct.Struct(">BHHBIIB")
_TENSOR_HEAD = struct.Struct(">BBHHBB")
_TENSOR_KINDS = ("mv", "residual", "intra", "patch")


def frame_to_stream(enc: EncodedFrame) -> bytes:
    """All tensors of a frame entropy-coded into one byte string."""
    parts = [_STREAM_HEAD.pack(
        0 if enc.frame_kind == "I" else 1, enc.width, enc.height, enc.rung,
        NO_REF if enc.reference_id is None else enc.reference_id, enc.frame_id, len(frame_tensors(enc)),
    )]
    for g, t in frame_tensors(enc):
        model = entropy.fit_model(t.values)
        mbytes = entropy.serialize_model(model)
        payload = entropy.encode_packet(t.flat(), tensor_channels(t), model)
        aux = enc.ipatch.k if g == "patch" else 0
        parts.append(_TENSOR_HEAD.pack(_TENSOR_KINDS.index(g), t.channels, t.rows, t.cols, aux, len(mbytes)))
        parts.append(mbytes)
        parts.append(struct.pack(">I", len(payload)))
        parts.append(payload)
    return b"".join(parts)


def estimate_stream_bytes(enc: EncodedFrame) -> float:
    total = _STREAM_HEAD.size
    for _, t in frame_tensors(enc):
        model = entropy.fit_model(t.values)
        total += _TENSOR_HEAD.size + len(entropy.serialize_model(model)) + 4
        total += entropy.cross_entropy_bits(t.flat(), tensor_channels(t), model) / 8 + 2
    return total


def stream_to_frame(data: bytes) -> EncodedFrame:
    try:
        return _stream_to_frame(data)
    except (struct.error, entropy.EntropyError, ValueError) as e:
        raise WireError(f"malformed frame stream: {e}") from e


def _stream_to_frame(data: bytes) -> EncodedFrame:
    fk, w, h, rung, ref, fid, count = _STREAM_HEAD.unpack_from(data, 0)
    pos = _STREAM_HEAD.size
    tensors = {}
    for _ in range(count):
        g, ch, rows, cols, aux, mlen = _TENSOR_HEAD.unpack_from(data, pos)
        pos += _TENSOR_HEAD.size
        model, _ = entropy.deserialize_model(data[pos:pos + mlen])
        pos += mlen
        (plen,) = struct.unpack_from(">I", data, pos)
        pos += 4
        if pos + plen > len(data):
            raise WireError("stream payload truncated")
        name = _TENSOR_KINDS[g]
        chans = _plane_channels(ch, rows * cols)
        vals = entropy.decode_packet(data[pos:pos + plen], model, chans).reshape(ch, rows, cols)
        pos += plen
        kind = "intra" if name == "patch" else name
        tensors[name] = (CodedTensor(kind, vals, _steps(kind, rung, ch)), aux)
    kind = "IP"[fk]
    res = tensors["intra" if kind == "I" else "residual"][0]
    mv = tensors["mv"][0] if "mv" in tensors else None
    patch = None
    if "patch" in tensors:
        t, k = tensors["patch"]
        patch = IPatch(core.patch_rect(fid, (w, h), k), t, k)
    return EncodedFrame(fid, kind, w, h, rung, res, mv, patch, None if ref == NO_REF else ref)


def chunk_stream(data: bytes, mtu: int = MTU) -> list:
    size = mtu - FIXED_HEADER
    return [data[i:i + size] for i in range(0, len(data), size)] or [b""]
