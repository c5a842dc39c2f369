"""Receivers: buffering, in-order decode triggers, feedback.

Frame ``f`` is decoded, from whatever arrived, as soon as one of these holds:

* every packet of ``f`` is in;
* a packet of a later frame arrives after ``f``'s first packet;
* ``t_max`` has passed since ``f``'s first packet.

A frame with no packets while later frames are arriving is either given up
at once (baselines) or, for the grace scheme, asked for once with a resend
request and abandoned ``t_max`` after the request.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .. import entropy
from ..codec import core
from ..codec.core import ReferenceState
from ..netsim import Decoded
from ..packetizer import PacketizationError
from . import fec
from .framing import assemble, stream_to_frame
from .wire import NO_REF, Feedback, Packet, ResendRequest, WireError

T_MAX_MS = 400.0
DECODED_WINDOW = 64


@dataclass
class _Pending:
    packets: dict = field(default_factory=dict)
    count: int = 0
    first: Optional[float] = None
    later_seen: bool = False
    resend_at: Optional[float] = None


class FrameBuffer:
    def __init__(self, width: int, height: int, t_max_ms: float = T_MAX_MS, resend: bool = False):
        self.width = width
        self.height = height
        self.t_max = t_max_ms
        self.resend = resend
        self.pending: dict = {}
        self.next_id = 0
        self.max_seen = -1
        self.counters = {"malformed": 0, "late": 0, "duplicate": 0, "resend_requests": 0}

    # -- packet intake

    def on_packet(self, now: float, data: bytes) -> list:
        try:
            p = Packet.from_bytes(data)
        except WireError:
            self.counters["malformed"] += 1
            return self.poll(now)
        if p.frame_id < self.next_id:
            self.counters["late"] += 1
            return self.poll(now)
        st = self.pending.setdefault(p.frame_id, _Pending())
        if st.count and p.packet_count != st.count:
            self.counters["malformed"] += 1
            return self.poll(now)
        if p.packet_index in st.packets:
            self.counters["duplicate"] += 1
            return self.poll(now)
        st.packets[p.packet_index] = p
        st.count = p.packet_count
        if st.first is None:
            st.first = now
        for g, other in self.pending.items():
            if g < p.frame_id and other.first is not None:
                other.later_seen = True
        self.max_seen = max(self.max_seen, p.frame_id)
        return self.poll(now)

    # -- triggers

    def poll(self, now: float) -> list:
        out: list = []
        while True:
            f = self.next_id
            st = self.pending.get(f)
            if st is not None and st.packets:
                if len(st.packets) == st.count or st.later_seen or now >= st.first + self.t_max:
                    out += self._release(f, now)
                    continue
                break
            if self.max_seen > f:
                if self.resend:
                    if st is None:
                        st = self.pending[f] = _Pending()
                    if st.resend_at is None:
                        st.resend_at = now
                        self.counters["resend_requests"] += 1
                        out.append(ResendRequest(f))
                        break
                    if now >= st.resend_at + self.t_max:
                        out += self._abandon(f, now)
                        continue
                    break
                out += self._abandon(f, now)
                continue
            break
        return out

    def next_deadline(self) -> Optional[float]:
        st = self.pending.get(self.next_id)
        if st is None:
            return None
        if st.packets:
            return st.first + self.t_max
        if st.resend_at is not None:
            return st.resend_at + self.t_max
        return None

    def flush(self, now: float) -> list:
        """Resolve every frame that left a trace; used when the session ends."""
        out: list = []
        while self.next_id <= self.max_seen:
            st = self.pending.get(self.next_id)
            if st is not None and st.packets:
                out += self._release(self.next_id, now)
            else:
                out += self._abandon(self.next_id, now)
        return out

    def _release(self, f: int, now: float) -> list:
        st = self.pending.pop(f)
        self.next_id = f + 1
        packets = [st.packets[i] for i in sorted(st.packets)]
        return self.decode_frame(f, packets, st.count, now)

    def _abandon(self, f: int, now: float) -> list:
        self.pending.pop(f, None)
        self.next_id = f + 1
        return self.give_up(f, now)

    # -- scheme hooks

    def decode_frame(self, f: int, packets: list, count: int, now: float) -> list:
        raise NotImplementedError

    def give_up(self, f: int, now: float) -> list:
        return [Decoded(f, None, 0, "lost"), Feedback(f, (), _us(now))]


def _us(now_ms: float) -> int:
    return int(round(now_ms * 1000))


class GraceReceiver(FrameBuffer):
    """Decodes any non-empty subset; asks once for frames that vanished entirely."""

    def __init__(self, width: int, height: int, t_max_ms: float = T_MAX_MS):
        super().__init__(width, height, t_max_ms, resend=True)
        self.ref: Optional[ReferenceState] = None

    def decode_frame(self, f, packets, count, now):
        try:
            enc, bitmap = assemble(packets, self.width, self.height)
        except (WireError, entropy.EntropyError, PacketizationError, ValueError):
            self.counters["malformed"] += len(packets)
            return self.give_up(f, now)
        if not any(bitmap):
            return self.give_up(f, now)
        fb = Feedback(f, bitmap, _us(now))
        if enc.frame_kind == "P" and self.ref is None:
            return [Decoded(f, None, sum(bitmap), "no reference"), fb]
        img = core.decode(enc, self.ref if enc.frame_kind == "P" else None)
        self.ref = ReferenceState(f, img)
        note = "" if all(bitmap) else "partial"
        return [Decoded(f, img, sum(bitmap), note), fb]

    def give_up(self, f, now):
        if self.ref is not None:
            self.ref = ReferenceState(f, self.ref.frame)
        return super().give_up(f, now)


class SvcOracle:
    """Side table of what each SVC layer count would display (idealized layering)."""

    def __init__(self):
        self.images: dict = {}

    def put(self, f: int, images: list) -> None:
        self.images[f] = images

    def image(self, f: int, level: int):
        return self.images[f][level]


class BaselineReceiver(FrameBuffer):
    """Monolithic-stream receiver for the skip, fec and svc schemes.

    A frame is usable only if its stream (or, for svc, the base layer) is
    recoverable and the frame it references was itself decoded.
    """

    def __init__(self, width: int, height: int, mode: str, t_max_ms: float = T_MAX_MS, oracle=None):
        if mode not in ("skip", "fec", "svc"):
            raise ValueError(f"unknown baseline mode {mode!r}")
        super().__init__(width, height, t_max_ms, resend=False)
        self.mode = mode
        self.oracle = oracle
        self.decoded: dict = {}

    def _remember(self, f: int, img) -> None:
        self.decoded[f] = img
        for old in [g for g in self.decoded if g <= f - DECODED_WINDOW]:
            del self.decoded[old]

    def decode_frame(self, f, packets, count, now):
        bitmap = [False] * count
        for p in packets:
            bitmap[p.packet_index] = True
        fb = Feedback(f, tuple(bitmap), _us(now))
        first = packets[0]
        ref = None if first.ref_id == NO_REF else first.ref_id
        if first.frame_kind == "P" and ref not in self.decoded:
            return [Decoded(f, None, len(packets), "reference missing"), fb]
        try:
            if self.mode == "svc":
                level = _svc_level(packets)
                if level < 0:
                    return [Decoded(f, None, len(packets), "base layer lost"), fb]
                img = self.oracle.image(f, level)
                self._remember(f, img)
                return [Decoded(f, img, len(packets), f"layers {level + 1}"), fb]
            data = self._stream(packets)
            if data is None:
                return [Decoded(f, None, len(packets), "stream incomplete"), fb]
            enc = stream_to_frame(data)
            rstate = None if enc.frame_kind == "I" else ReferenceState(ref, self.decoded[ref])
            img = core.decode(enc, rstate)
        except (WireError, fec.FECError, core.CodecError, ValueError):
            self.counters["malformed"] += 1
            return [Decoded(f, None, len(packets), "corrupt"), fb]
        self._remember(f, img)
        return [Decoded(f, img, len(packets)), fb]

    def _stream(self, packets) -> Optional[bytes]:
        d = packets[0]
        if self.mode == "skip":
            chunks = {p.slot: p.payload for p in packets if p.kind == "chunk"}
            if len(chunks) < d.n:
                return None
            return b"".join(chunks[i] for i in range(d.n))[:d.m]
        shards = {p.slot: p.payload for p in packets if p.kind == "fec"}
        if len(shards) < d.n:
            return None
        return fec.decode(shards, d.n, d.m)


def _svc_level(packets) -> int:
    """Highest decodable layer index, or -1 when the protected base layer is unrecoverable."""
    by_layer: dict = {}
    for p in packets:
        by_layer.setdefault(p.aux, []).append(p)
    base = by_layer.get(0, [])
    if not base or len({p.slot for p in base}) < base[0].n:
        return -1
    level = 0
    for layer in range(1, 4):
        got = by_layer.get(layer, [])
        if not got or len({p.slot for p in got}) < got[0].n:
            break
        level = layer
    return level
