"""Loss-tolerant sender: optimistic encoding with feedback-driven reference resync.

The sender always encodes against the reference it would have if every
packet so far had arrived. Feedback bitmaps let it replay, without motion
search, exactly what the receiver decoded; after a loss it swaps in that
replayed reference so both sides agree again.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Optional

from ..codec import core
from ..codec.core import EncodedFrame, QualityLevel, ReferenceState, TensorCache
from ..netsim import SendReport
from .framing import estimate_frame_bytes, packetize, reception_from_bitmap
from .wire import MTU, Feedback, ResendRequest

LADDER_STEPS = 2
START_RUNG = 5


@dataclass
class SentFrame:
    enc: EncodedFrame
    layout: tuple
    maps: dict
    packets: list
    recon: object  # Frame decoded as if fully received


def select_rung(enc: EncodedFrame, budget: float, size_of, max_steps: int = LADDER_STEPS):
    """Highest rung within ``max_steps`` of ``enc.rung`` whose size fits ``budget``.

    Walks up while the next rung still fits, or down until one fits. Returns
    ``(encoded, estimated size, overshoot)``.
    """
    best, best_size = enc, size_of(enc)
    if best_size <= budget:
        for r in range(enc.rung + 1, min(core.RUNGS - 1, enc.rung + max_steps) + 1):
            e = core.requantize_residual(enc, r)
            s = size_of(e)
            if s > budget:
                break
            best, best_size = e, s
        return best, best_size, False
    for r in range(enc.rung - 1, max(0, enc.rung - max_steps) - 1, -1):
        best = core.requantize_residual(enc, r)
        best_size = size_of(best)
        if best_size <= budget:
            return best, best_size, False
    return best, best_size, True


class GraceSender:
    def __init__(
        self,
        fps: float = 25.0,
        mtu: int = MTU,
        ipatch_k: Optional[int] = 30,
        window: int = core.CACHE_WINDOW,
        iframe_interval: int = core.IFRAME_INTERVAL,
        start_rung: int = START_RUNG,
        ladder_steps: int = LADDER_STEPS,
        search_range: int = core.SEARCH_RANGE,
    ):
        self.fps = fps
        self.mtu = mtu
        self.ipatch_k = ipatch_k
        self.window = window
        self.iframe_interval = iframe_interval
        self.rung = start_rung
        self.ladder_steps = ladder_steps
        self.search_range = search_range
        self.next_id = 0
        self.ref: Optional[ReferenceState] = None  # optimistic
        self.cache = TensorCache(window)
        self.rx_ref: Optional[ReferenceState] = None  # receiver's reference as replayed here
        self.stale_through = -1  # cached recons up to this id predate the latest resync
        self.last_iframe = -1
        self.force_iframe = False
        self.resync_log: list = []  # (frame_id, chain length, seconds)
        self.encode_seconds: list = []

    # -- encoding

    def on_tick(self, now: float, frame, target_bps: float) -> SendReport:
        fid = self.next_id
        self.next_id += 1
        budget = target_bps / self.fps / 8
        t0 = time.perf_counter()
        rung = QualityLevel(self.rung)
        intra = self.ref is None or self.force_iframe or fid % self.iframe_interval == 0
        if intra:
            enc = core.encode_i(frame, rung, fid)
        else:
            enc = core.encode_p(frame, self.ref, rung, fid, self.search_range, self.ipatch_k)
        # keyframes may walk the whole ladder: one bad guess there costs a burst of losses
        steps = core.RUNGS if intra else self.ladder_steps
        enc, _, overshoot = select_rung(enc, budget, lambda e: estimate_frame_bytes(e, self.mtu), steps)
        self.encode_seconds.append(time.perf_counter() - t0)
        self.rung = enc.rung
        packets, layout, maps = packetize(enc, "grace", self.mtu)
        recon = core.decode(enc, None if intra else self.ref)
        if intra:
            self.last_iframe = fid
            self.force_iframe = False
        self.ref = ReferenceState(fid, recon)
        self.cache.put(fid, SentFrame(enc.drop_raw(), layout, maps, packets, recon))
        over = overshoot or sum(p.size for p in packets) > budget
        return SendReport(packets, enc.rung, over, "I" if intra else "")

    # -- feedback

    def on_control(self, now: float, msg) -> list:
        if isinstance(msg, ResendRequest):
            sf = self.cache.get(msg.frame_id)
            if sf is None:
                return []
            return [replace(p, retransmit=True) for p in sf.packets]
        if isinstance(msg, Feedback):
            self.on_feedback(msg)
        return []

    def on_feedback(self, fb: Feedback) -> None:
        f = fb.frame_id
        sf = self.cache.get(f)
        if sf is None:
            # fell out of the window: the receiver's state can no longer be replayed
            self.rx_ref = None
            self._need_iframe(f)
            return
        rec = reception_from_bitmap(sf.enc, sf.layout, sf.maps, fb.received) if fb.received else None
        complete = rec is not None and all(fb.received)
        enc = sf.enc
        if rec is None:
            if self.rx_ref is not None:
                self.rx_ref = ReferenceState(f, self.rx_ref.frame)
        elif enc.frame_kind == "I":
            self.rx_ref = ReferenceState(f, sf.recon if complete else core.decode(enc, None, rec))
        elif self.rx_ref is None:
            self._need_iframe(f)
            self.cache.drop_through(f)
            return
        elif complete and f > self.stale_through:
            self.rx_ref = ReferenceState(f, sf.recon)
        else:
            self.rx_ref = ReferenceState(f, core.decode(enc, self.rx_ref, rec))
        if not complete:
            self._resync(f)
        self.cache.drop_through(f)

    def _need_iframe(self, f: int) -> None:
        if self.last_iframe <= f:
            self.force_iframe = True

    def _resync(self, f: int) -> None:
        """Replay frames after ``f`` on top of the receiver's reference."""
        if self.rx_ref is None:
            self._need_iframe(f)
            return
        latest = self.next_id - 1
        chain = []
        for g in range(f + 1, latest + 1):
            sf = self.cache.get(g)
            if sf is None:
                self._need_iframe(f)
                return
            chain.append((sf.enc, core.Reception.full(sf.enc)))
        t0 = time.perf_counter()
        self.ref = core.fast_redecode(chain, self.rx_ref, self.window) if chain else self.rx_ref
        self.resync_log.append((f, len(chain), time.perf_counter() - t0))
        self.stale_through = latest
