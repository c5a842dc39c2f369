"""Comparison senders that ship each frame as one monolithic coded stream.

* ``skip``: the stream is chunked into packets and is usable only when every
  chunk arrives. After loss feedback the encoder re-references the newest
  frame the receiver is known to have decoded.
* ``fec``: the stream is protected by a systematic Reed-Solomon code whose
  redundancy follows the worst loss seen over the last two seconds.
* ``svc``: idealized four-layer scalable coding. The stream is split into
  four equal-byte layers; the base layer carries 50% Reed-Solomon parity.
  Receiving layers ``0..l`` displays the single-layer decode at the finest
  rung whose stream fits ``(l + 1) / 4`` of the bytes, predicted from the
  encoder's own reference (no drift).

Loss recovery is the same for all three: frames whose reference chain
includes an undecodable frame are undecodable too, until an encode against
a known-good reference arrives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from ..codec import core
from ..codec.core import EncodedFrame, QualityLevel, ReferenceState
from ..netsim import SendReport
from . import fec
from .framing import chunk_stream, estimate_stream_bytes, frame_to_stream
from .grace import LADDER_STEPS, START_RUNG, select_rung
from .receiver import SvcOracle
from .wire import FIXED_HEADER, MTU, NO_REF, Feedback, Packet

SVC_LAYERS = 4
SVC_BASE_REDUNDANCY = 0.5
MODES = ("skip", "fec", "svc")


@dataclass
class _Sent:
    enc: EncodedFrame
    recon: object
    ref_id: Optional[int]
    k: int = 0  # source shards needed (fec: whole stream, svc: base layer)


class BaselineSender:
    def __init__(
        self,
        mode: str,
        fps: float = 25.0,
        mtu: int = MTU,
        window: int = 64,
        iframe_interval: int = core.IFRAME_INTERVAL,
        start_rung: int = START_RUNG,
        ladder_steps: int = LADDER_STEPS,
        fixed_redundancy: Optional[float] = None,
        oracle: Optional[SvcOracle] = None,
        search_range: int = core.SEARCH_RANGE,
    ):
        if mode not in MODES:
            raise ValueError(f"unknown baseline {mode!r}; choose from {', '.join(MODES)}")
        if mode == "svc" and oracle is None:
            raise ValueError("svc sender needs the shared layer oracle")
        self.mode = mode
        self.fps = fps
        self.mtu = mtu
        self.window = window
        self.iframe_interval = iframe_interval
        self.rung = start_rung
        self.ladder_steps = ladder_steps
        self.fixed_redundancy = fixed_redundancy
        self.oracle = oracle
        self.search_range = search_range
        self.redundancy = fec.RedundancyController()
        self.next_id = 0
        self.head: Optional[ReferenceState] = None
        self.sent: dict = {}
        self.known: dict = {}  # frame id -> decoded at the receiver?
        self.force_iframe = False
        self.last_iframe = -1

    # -- sizing

    def current_redundancy(self, now: float) -> float:
        if self.mode == "svc":
            return 0.0
        if self.mode == "fec":
            if self.fixed_redundancy is not None:
                return self.fixed_redundancy
            return self.redundancy.redundancy(now)
        return 0.0

    def _source_budget(self, budget: float, R: float) -> float:
        payload = self.mtu - FIXED_HEADER
        per_byte = 1 + FIXED_HEADER / payload
        if self.mode == "fec":
            return budget * (1 - R) / per_byte
        if self.mode == "svc":
            base = 1 / SVC_LAYERS
            return budget / ((1 + base * SVC_BASE_REDUNDANCY / (1 - SVC_BASE_REDUNDANCY)) * per_byte)
        return budget / per_byte

    # -- encoding

    def on_tick(self, now: float, frame, target_bps: float) -> SendReport:
        fid = self.next_id
        self.next_id += 1
        budget = target_bps / self.fps / 8
        R = self.current_redundancy(now)
        rung = QualityLevel(self.rung)
        intra = self.head is None or self.force_iframe or fid % self.iframe_interval == 0
        ref = None if intra else self.head
        if intra:
            enc = core.encode_i(frame, rung, fid)
        else:
            enc = core.encode_p(frame, ref, rung, fid, self.search_range)
        steps = core.RUNGS if intra else self.ladder_steps
        enc, _, overshoot = select_rung(enc, self._source_budget(budget, R), estimate_stream_bytes, steps)
        self.rung = enc.rung
        recon = core.decode(enc, ref)
        if intra:
            self.force_iframe = False
            self.last_iframe = fid
        stream = frame_to_stream(enc)
        packets, k = self._packets(enc, stream, R)
        if self.mode == "svc":
            self.oracle.put(fid, self._layer_images(enc, ref, recon, len(stream)))
        self.sent[fid] = _Sent(enc.drop_raw(), recon, None if intra else ref.frame_id, k)
        for old in [g for g in self.sent if g <= fid - self.window]:
            del self.sent[old]
        self.head = ReferenceState(fid, recon)
        over = overshoot or sum(p.size for p in packets) > budget
        return SendReport(packets, enc.rung, over, "I" if intra else "")

    def _packet(self, enc, idx, count, kind, aux, m, n, p, slot, payload) -> Packet:
        ref = NO_REF if enc.reference_id is None else enc.reference_id
        return Packet(self.mode, enc.frame_id, enc.frame_kind, idx, count, kind, 0, 0, 0, enc.rung,
                      aux, m, n, p, slot, ref, b"", payload)

    def _packets(self, enc: EncodedFrame, stream: bytes, R: float):
        payload = self.mtu - FIXED_HEADER
        if self.mode == "skip":
            chunks = chunk_stream(stream, self.mtu)
            n = len(chunks)
            return [self._packet(enc, i, n, "chunk", 0, len(stream), n, 0, i, c)
                    for i, c in enumerate(chunks)], n
        if self.mode == "fec":
            k = max(1, math.ceil(len(stream) / payload))
            r = fec.parity_count(k, R)
            shards = fec.encode(stream, k, r)
            total = k + r
            return [self._packet(enc, i, total, "fec", 0, len(stream), k, r, i, s)
                    for i, s in enumerate(shards)], k
        # svc: four equal-byte layers, base layer RS-protected
        cut = [round(len(stream) * i / SVC_LAYERS) for i in range(SVC_LAYERS + 1)]
        layers = [stream[cut[i]:cut[i + 1]] for i in range(SVC_LAYERS)]
        base = layers[0]
        kb = max(1, math.ceil(len(base) / payload))
        rb = fec.parity_count(kb, SVC_BASE_REDUNDANCY)
        plan = [(0, s, len(base), kb, rb) for s in fec.encode(base, kb, rb)]
        for li in range(1, SVC_LAYERS):
            ch = chunk_stream(layers[li], self.mtu)
            plan += [(li, c, len(layers[li]), len(ch), 0) for c in ch]
        total = len(plan)
        out = []
        slots: dict = {}
        for i, (li, data, m, n, p) in enumerate(plan):
            j = slots.get(li, 0)
            slots[li] = j + 1
            out.append(self._packet(enc, i, total, "svc", li, m, n, p, j, data))
        return out, kb

    def _layer_images(self, enc, ref, recon, full_bytes) -> list:
        """Display frame for each received layer count (idealized scalable coding)."""
        if enc.raw is None:
            raise core.CodecError("layer images need the unquantized residual")
        images = []
        for level in range(SVC_LAYERS - 1):
            share = full_bytes * (level + 1) / SVC_LAYERS
            pick = None
            for r in range(enc.rung, -1, -1):
                e = core.requantize_residual(enc, r)
                if estimate_stream_bytes(e) <= share:
                    pick = e
                    break
            if pick is None:
                pick = core.requantize_residual(enc, 0)
            images.append(core.decode(pick, ref))
        images.append(recon)
        return images

    # -- feedback

    def on_control(self, now: float, msg) -> list:
        if isinstance(msg, Feedback):
            self.on_feedback(now, msg)
        return []

    def _stream_ok(self, s: _Sent, received) -> bool:
        if not received:
            return False
        got = sum(received)
        if self.mode == "skip":
            return got == len(received)
        if self.mode == "fec":
            return got >= s.k
        return sum(received[: s.k + fec.parity_count(s.k, SVC_BASE_REDUNDANCY)]) >= s.k

    def on_feedback(self, now: float, fb: Feedback) -> None:
        f = fb.frame_id
        self.redundancy.observe(now, fb.loss_rate)
        s = self.sent.get(f)
        if s is None:
            self.known[f] = False
            self.force_iframe = self.last_iframe <= f
            return
        ok = self._stream_ok(s, fb.received) and (s.ref_id is None or self.known.get(s.ref_id, False))
        self.known[f] = ok
        for old in [g for g in self.known if g <= f - self.window]:
            del self.known[old]
        if ok or not self._head_depends_on(f):
            return
        good = [g for g, v in self.known.items() if v and g in self.sent]
        if good:
            g = max(good)
            self.head = ReferenceState(g, self.sent[g].recon)
        elif self.last_iframe <= f:
            self.force_iframe = True

    def _head_depends_on(self, f: int) -> bool:
        g = None if self.head is None else self.head.frame_id
        while g is not None and g >= f:
            if g == f:
                return True
            s = self.sent.get(g)
            g = None if s is None else s.ref_id
        return False
