import numpy as np
import pytest

from rtvlab.media import BandwidthTrace, SyntheticSpec, synth_sequence
from rtvlab.netsim import (
    Decoded,
    EventLoop,
    Link,
    NetConfig,
    SendReport,
    Simulation,
    TokenBucket,
    packet_conservation,
)
from rtvlab.transport import Packet, make_controller, make_scheme
from rtvlab.transport.rate import Replay
from rtvlab.transport.wire import FIXED_HEADER


def _link(trace, **kw):
    loop = EventLoop()
    log, got = [], []
    link = Link(loop, NetConfig(trace, **kw), got.append, log)
    return loop, link, log, got


def _times(log, kind):
    return [e["t_us"] for e in log if e["event"] == kind]


def test_departure_spacing_at_8mbps():
    loop, link, log, _ = _link(BandwidthTrace.constant(8e6, 2))
    for i in range(20):
        link.send(i, 1200, {"packet_index": i})
    loop.run()
    dep = _times(log, "depart")
    assert dep[0] == 1200
    assert set(np.diff(dep)) == {1200}


def test_frame_burst_at_3mbps():
    loop, link, log, _ = _link(BandwidthTrace.constant(3e6, 2))
    sizes = [1200] * 12 + [600]  # 15 KB
    for i, s in enumerate(sizes):
        link.send(i, s, {"packet_index": i})
    loop.run()
    assert _times(log, "depart")[-1] == 40_000


def test_drop_tail_with_no_service():
    trace = BandwidthTrace.steps([(0.5, 0.0), (0.5, 8e6)])
    loop, link, log, got = _link(trace)
    accepted = [link.send(i, 1200, {"packet_index": i}) for i in range(30)]
    assert accepted == [True] * 25 + [False] * 5
    drops = [e["packet_index"] for e in log if e["event"] == "drop"]
    assert drops == [25, 26, 27, 28, 29]
    loop.run()
    assert min(_times(log, "depart")) >= 500_000
    assert got == list(range(25))


def test_fifo_and_delay():
    loop, link, log, got = _link(BandwidthTrace.constant(4e6, 3), one_way_delay_ms=30)
    for i in range(15):
        loop.at(i * 700, link.send, i, 500 + 37 * i, {"packet_index": i})
    loop.run()
    assert got == list(range(15))
    dep, arr = _times(log, "depart"), _times(log, "deliver")
    assert [a - d for d, a in zip(dep, arr)] == [30_000] * 15


def test_idle_bucket_allows_a_burst():
    loop, link, log, _ = _link(BandwidthTrace.constant(8e6, 3))
    loop.run(1_000_000)
    for i in range(25):
        link.send(i, 1200, {"packet_index": i})
    assert _times(log, "depart") == [1_000_000] * 25


def test_bucket_depth_two_grants():
    b = TokenBucket(BandwidthTrace.constant(1e6, 5))
    b.advance(3_000_000)
    assert b.tokens == pytest.approx(2 * 1e6 * 0.1)


def test_oversize_packet_rejected():
    _, link, _, _ = _link(BandwidthTrace.constant(1e6, 1))
    with pytest.raises(ValueError):
        link.send(0, 1201)


def test_config_validation():
    t = BandwidthTrace.constant(1e6, 1)
    for kw in ({"one_way_delay_ms": -1}, {"queue_capacity": 0}, {"random_loss": 1.0}):
        with pytest.raises(ValueError):
            NetConfig(t, **kw)
    assert NetConfig(t).random_loss == 0.0


def test_event_loop_rejects_past():
    loop = EventLoop()
    loop.run(100)
    with pytest.raises(ValueError):
        loop.at(50, print)


class _OneFrameSender:
    """Ships one frame of ``total`` bytes (headers included) at t=0."""

    def __init__(self, total, mtu=1200):
        self.total, self.mtu = total, mtu

    def on_tick(self, now, frame, target):
        if frame.frame_index:
            return SendReport([])
        sizes = [self.mtu] * (self.total // self.mtu)
        if self.total % self.mtu:
            sizes.append(self.total % self.mtu)
        return SendReport([Packet("skip", 0, "I", i, len(sizes), "chunk", payload=bytes(s - FIXED_HEADER))
                           for i, s in enumerate(sizes)])

    def on_control(self, now, msg):
        return []


class _CountingReceiver:
    def __init__(self):
        self.seen = 0

    def on_packet(self, now, data):
        p = Packet.from_bytes(data)
        self.seen += 1
        return [Decoded(0, object(), self.seen)] if self.seen == p.packet_count else []

    def poll(self, now):
        return []

    def next_deadline(self):
        return None

    def flush(self, now):
        return []


def test_single_frame_delay_matches_closed_form():
    trace = BandwidthTrace.constant(8e6, 2)
    frames = synth_sequence(SyntheticSpec(width=16, height=16), 1).frames
    sim = Simulation(_OneFrameSender(12_000), _CountingReceiver(), Replay([8e6]), NetConfig(trace),
                     frames, measure_quality=False)
    tl = sim.run()
    expect = 100.0 + 12_000 * 8 / 8e6 * 1000
    assert abs(tl.frames[0].delay - expect) <= 1200 * 8 / 8e6 * 1000
    assert sim.conservation_ok()


def _session(seed=0):
    frames = synth_sequence(SyntheticSpec(width=96, height=64), 30).frames
    trace = BandwidthTrace.steps([(0.4, 2e6), (0.4, 0.3e6), (0.5, 2e6)])
    s, r = make_scheme("grace", 96, 64)
    sim = Simulation(s, r, make_controller("delay-aimd", trace, 3e6), NetConfig(trace, queue_capacity=6, seed=seed),
                     frames, scheme="grace")
    return sim, sim.run()


def test_deterministic_and_conserving():
    a, ta = _session()
    b, tb = _session()
    assert a.events == b.events
    assert ta.frames_csv() == tb.frames_csv()
    assert a.link.stats["dropped"] > 0
    assert a.conservation_ok()


def test_conservation_detects_missing_fate():
    events = [{"event": "send", "frame_id": 0, "packet_index": 0, "retransmit": False}]
    assert not packet_conservation(events)
    events.append({"event": "deliver", "frame_id": 0, "packet_index": 0, "retransmit": False})
    assert packet_conservation(events)
