"""Deterministic packet-level network simulator.

One bottleneck link: a token bucket refilled from the bandwidth trace (one
rate per 0.1 s sample, bucket depth two sample grants), a drop-tail FIFO and
a fixed one-way propagation delay. Feedback travels on a separate lossless
control channel with the same delay. The clock is an integer count of
microseconds; simultaneous events run in the order they were scheduled.
"""

from __future__ import annotations

import heapq
import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .media import BandwidthTrace
from .metrics import FrameRecord, SessionTimeline, psnr, ssim

US = 1_000_000
SLOT_US = 100_000
BUCKET_GRANTS = 2


def ms_to_us(ms: float) -> int:
    return int(round(ms * 1000))


@dataclass
class NetConfig:
    trace: BandwidthTrace
    one_way_delay_ms: float = 100.0
    queue_capacity: int = 25
    mtu: int = 1200
    seed: int = 0
    random_loss: float = 0.0  # optional i.i.d. drop probability at enqueue; off by default

    def __post_init__(self):
        if self.one_way_delay_ms < 0:
            raise ValueError("one-way delay must be non-negative")
        if self.queue_capacity < 1:
            raise ValueError("queue capacity must be at least one packet")
        if not 0 <= self.random_loss < 1:
            raise ValueError("random_loss must be in [0, 1)")


class EventLoop:
    def __init__(self):
        self.now = 0
        self._heap: list = []
        self._seq = itertools.count()

    def at(self, t_us: int, fn: Callable, *args) -> None:
        if t_us < self.now:
            raise ValueError(f"cannot schedule at {t_us} us, clock is at {self.now} us")
        heapq.heappush(self._heap, (int(t_us), next(self._seq), fn, args))

    def after(self, delay_us: int, fn: Callable, *args) -> None:
        self.at(self.now + int(delay_us), fn, *args)

    def run(self, until_us: Optional[int] = None) -> None:
        while self._heap:
            if until_us is not None and self._heap[0][0] > until_us:
                break
            t, _, fn, args = heapq.heappop(self._heap)
            self.now = t
            fn(*args)
        if until_us is not None:
            self.now = max(self.now, until_us)

    def __len__(self):
        return len(self._heap)


class TokenBucket:
    """Bit tokens accrued at the trace rate, capped at two grants of the current sample."""

    def __init__(self, trace: BandwidthTrace):
        self.rates = trace.rates
        self.tokens = 0.0
        self.t = 0

    def _rate(self, slot: int) -> float:
        return float(self.rates[min(slot, self.rates.size - 1)])

    def _cap(self, slot: int) -> float:
        return BUCKET_GRANTS * self._rate(slot) * SLOT_US / US

    def advance(self, t_us: int) -> None:
        t, tok = self.t, self.tokens
        while t < t_us:
            slot = t // SLOT_US
            end = min(t_us, (slot + 1) * SLOT_US)
            tok = min(self._cap(slot), tok + self._rate(slot) * (end - t) / US)
            t = end
        self.t, self.tokens = max(self.t, t_us), tok

    def ready_at(self, bits: float) -> Optional[int]:
        """Earliest time the bucket holds ``bits`` tokens, or None if it never will."""
        t, tok = self.t, self.tokens
        last = self.rates.size - 1
        while True:
            if tok >= bits - 1e-9:
                return t
            slot = t // SLOT_US
            r, cap = self._rate(slot), self._cap(slot)
            if r > 0 and cap >= bits:
                t_hit = t + math.ceil((bits - tok) / r * US - 1e-6)
                if slot >= last or t_hit <= (slot + 1) * SLOT_US:
                    return t_hit
            elif slot >= last:
                return None
            end = (slot + 1) * SLOT_US
            tok = min(cap, tok + r * (end - t) / US)
            t = end

    def take(self, bits: float) -> None:
        self.tokens = max(0.0, self.tokens - bits)


class Link:
    """Drop-tail bottleneck. ``deliver(item)`` fires one propagation delay after departure."""

    def __init__(self, loop: EventLoop, config: NetConfig, deliver: Callable, log: Optional[list] = None):
        self.loop = loop
        self.config = config
        self.deliver = deliver
        self.log = log
        self.bucket = TokenBucket(config.trace)
        self.queue: deque = deque()
        self.busy = False
        self.delay_us = ms_to_us(config.one_way_delay_ms)
        self.rng = np.random.default_rng(config.seed)
        self.stats = {"sent": 0, "dropped": 0, "delivered": 0, "departed": 0}

    def _event(self, kind: str, meta: dict, size: int) -> None:
        if self.log is not None:
            self.log.append({"t_us": self.loop.now, "event": kind, "bytes": size, **meta})

    def send(self, item, size: int, meta: Optional[dict] = None) -> bool:
        if size > self.config.mtu:
            raise ValueError(f"packet of {size} bytes exceeds the {self.config.mtu}-byte MTU")
        meta = meta or {}
        self.stats["sent"] += 1
        self._event("send", meta, size)
        if len(self.queue) >= self.config.queue_capacity or (
            self.config.random_loss and self.rng.random() < self.config.random_loss
        ):
            self.stats["dropped"] += 1
            self._event("drop", meta, size)
            return False
        self.queue.append((item, size, meta))
        self._kick()
        return True

    def _kick(self) -> None:
        # packets the bucket already covers leave at once, so a burst only
        # queues the part that exceeds the available tokens
        while not self.busy and self.queue:
            self.bucket.advance(self.loop.now)
            t = self.bucket.ready_at(self.queue[0][1] * 8)
            if t is None:
                return  # the trace never grants enough tokens again
            if t <= self.loop.now:
                self._depart_head()
                continue
            self.busy = True
            self.loop.at(t, self._depart)

    def _depart(self) -> None:
        self.busy = False
        self.bucket.advance(self.loop.now)
        self._depart_head()
        self._kick()

    def _depart_head(self) -> None:
        item, size, meta = self.queue.popleft()
        self.bucket.take(size * 8)
        self.stats["departed"] += 1
        self._event("depart", meta, size)
        self.loop.after(self.delay_us, self._arrive, item, size, meta)

    def _arrive(self, item, size, meta) -> None:
        self.stats["delivered"] += 1
        self._event("deliver", meta, size)
        self.deliver(item)

    @property
    def in_flight(self) -> int:
        s = self.stats
        return s["sent"] - s["dropped"] - s["delivered"]


class ControlChannel:
    """Lossless feedback path with a fixed delay."""

    def __init__(self, loop: EventLoop, delay_ms: float, deliver: Callable):
        self.loop = loop
        self.delay_us = ms_to_us(delay_ms)
        self.deliver = deliver

    def send(self, msg) -> None:
        self.loop.after(self.delay_us, self.deliver, msg)


# ---------------------------------------------------------------- session driver


@dataclass
class Decoded:
    """A receiver's verdict on one frame. ``image`` is None when nothing was displayable."""

    frame_id: int
    image: object = None
    packets_received: int = 0
    note: str = ""


@dataclass
class SendReport:
    packets: list
    rung: Optional[int] = None
    overshoot: bool = False
    note: str = ""


@dataclass
class Simulation:
    """Wires a sender, receiver, rate controller and source frames onto one link.

    Sender API: ``on_tick(now_ms, frame, target_bps) -> SendReport`` and
    ``on_control(now_ms, msg) -> list of packets``. Receiver API:
    ``on_packet(now_ms, packet) -> list``, ``poll(now_ms) -> list``,
    ``next_deadline() -> ms or None`` and ``flush(now_ms) -> list``; the
    lists mix :class:`Decoded` verdicts with control messages for the sender.
    """

    sender: object
    receiver: object
    controller: object
    net: NetConfig
    frames: object  # indexable source frames
    fps: float = 25.0
    scheme: str = ""
    decode_ms: float = 0.0
    drain_ms: float = 1000.0
    measure_quality: bool = True
    timeline: SessionTimeline = field(init=False)

    def __post_init__(self):
        self.loop = EventLoop()
        self.events: list = []
        self.link = Link(self.loop, self.net, self._on_data, self.events)
        self.to_sender = ControlChannel(self.loop, self.net.one_way_delay_ms, self._on_control)
        self.interval_ms = 1000.0 / self.fps
        self.timeline = SessionTimeline([], self.events, self.interval_ms, self.scheme)
        self._wakeups: set = set()
        self.targets: list = []

    @property
    def now_ms(self) -> float:
        return self.loop.now / 1000.0

    def run(self) -> SessionTimeline:
        count = len(self.frames)
        for i in range(count):
            self.timeline.frames.append(FrameRecord(i, i * self.interval_ms))
            self.loop.at(ms_to_us(i * self.interval_ms), self._tick, i)
        end = ms_to_us(count * self.interval_ms + self.drain_ms)
        self.loop.run(end)
        self._handle(self.receiver.flush(self.now_ms))
        return self.timeline

    def _tick(self, i: int) -> None:
        now = self.now_ms
        target = self.controller.target(now, i)
        self.targets.append(target)
        rep = self.sender.on_tick(now, self.frames[i], target)
        rec = self.timeline.frames[i]
        rec.rung = rep.rung
        rec.overshoot = rep.overshoot
        if rep.note:
            rec.note = rep.note
        self._send(rep.packets)

    def _send(self, packets) -> None:
        now = self.now_ms
        for p in packets:
            rec = self.timeline.frames[p.frame_id]
            if rec.first_send is None:
                rec.first_send = now
            rec.last_send = now
            rec.packets_sent += 1
            rec.bytes_sent += p.size
            meta = {"frame_id": p.frame_id, "packet_index": p.packet_index, "retransmit": p.retransmit}
            self.link.send(p.to_bytes(), p.size, meta)

    def _on_data(self, data: bytes) -> None:
        self._handle(self.receiver.on_packet(self.now_ms, data))

    def _on_control(self, msg) -> None:
        now = self.now_ms
        fid = getattr(msg, "frame_id", None)
        if hasattr(msg, "received") and fid is not None and fid < len(self.timeline.frames):
            self.controller.on_feedback(now, msg, self.timeline.frames[fid].encode_time)
        self._send(self.sender.on_control(now, msg))

    def _wake(self) -> None:
        self._wakeups.discard(self.loop.now)
        self._handle(self.receiver.poll(self.now_ms))

    def _handle(self, outputs) -> None:
        for out in outputs:
            if isinstance(out, Decoded):
                self._record(out)
            else:
                self.to_sender.send(out)
        dl = self.receiver.next_deadline()
        if dl is not None:
            t = max(ms_to_us(dl), self.loop.now)
            if t not in self._wakeups:
                self._wakeups.add(t)
                self.loop.at(t, self._wake)

    def _record(self, d: Decoded) -> None:
        if d.frame_id >= len(self.timeline.frames):
            return
        rec = self.timeline.frames[d.frame_id]
        rec.packets_received = d.packets_received
        if d.note:
            rec.note = d.note
        if d.image is None:
            rec.decodable = False
            return
        rec.decode_time = self.now_ms + self.decode_ms
        rec.render_time = rec.decode_time
        if self.measure_quality and rec.rendered:
            src = self.frames[d.frame_id]
            rec.psnr = psnr(src, d.image)
            rec.ssim = ssim(src, d.image)

    def conservation_ok(self) -> bool:
        """Every sent packet shows up exactly once as dropped or delivered."""
        return packet_conservation(self.events)


def packet_conservation(events) -> bool:
    fates: dict = {}
    sends: dict = {}
    for e in events:
        key = (e.get("frame_id"), e.get("packet_index"), e.get("retransmit"))
        if e["event"] == "send":
            sends[key] = sends.get(key, 0) + 1
        elif e["event"] in ("drop", "deliver"):
            fates[key] = fates.get(key, 0) + 1
    return sends == fates


def run(sim: Simulation) -> SessionTimeline:
    return sim.run()
