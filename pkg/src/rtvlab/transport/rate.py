"""Sender bitrate targets.

Controllers expose ``target(now_ms, frame_index) -> bps`` and
``on_feedback(now_ms, feedback, frame_encode_ms)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

ORACLE_SHARE = 0.85
MIN_BPS = 0.2e6
MAX_BPS = 12e6


@dataclass
class OracleTrace:
    """A fixed share of the true link bandwidth; isolates codec behaviour from estimation."""

    trace: object
    share: float = ORACLE_SHARE

    def target(self, now_ms: float, frame_index: int = 0) -> float:
        return self.share * self.trace.rate_at(now_ms / 1000.0)

    def on_feedback(self, now_ms, fb, encode_ms) -> None:
        pass


@dataclass
class DelayAIMD:
    """Multiplicative decrease on loss or a rising queuing delay, slow growth otherwise.

    The queuing delay of a frame is its encode-to-decode delay minus the
    smallest delay seen so far. Its slope against send time is smoothed;
    a slope above ``gradient_threshold`` (ms of queue per ms of time) or any
    lost packet multiplies the target by ``decrease``, at most once per
    ``hold_ms``. Otherwise the target grows by ``increase_per_s`` of itself
    per second.
    """

    initial_bps: float = 1e6
    decrease: float = 0.85
    increase_per_s: float = 0.05
    gradient_threshold: float = 0.1
    smoothing: float = 0.25
    hold_ms: float = 50.0
    min_bps: float = MIN_BPS
    max_bps: float = MAX_BPS
    rate: float = field(init=False)
    history: list = field(default_factory=list, init=False)

    def __post_init__(self):
        self.rate = min(self.max_bps, max(self.min_bps, self.initial_bps))
        self._t = None
        self._min_delay = None
        self._prev = None  # (encode_ms, queuing delay)
        self._grad = 0.0
        self._last_cut = -1e18

    def _grow(self, now_ms: float) -> None:
        if self._t is not None and now_ms > self._t:
            self.rate *= 1 + self.increase_per_s * (now_ms - self._t) / 1000.0
        self._t = now_ms
        self.rate = min(self.max_bps, max(self.min_bps, self.rate))

    def target(self, now_ms: float, frame_index: int = 0) -> float:
        self._grow(now_ms)
        self.history.append((now_ms, self.rate))
        return self.rate

    def on_feedback(self, now_ms: float, fb, encode_ms: float) -> None:
        self._grow(now_ms)
        lost = not fb.received or not all(fb.received)
        congested = lost
        if fb.received and any(fb.received):
            delay = fb.decode_time_us / 1000.0 - encode_ms
            if self._min_delay is None or delay < self._min_delay:
                self._min_delay = delay
            q = delay - self._min_delay
            if self._prev is not None and encode_ms > self._prev[0]:
                slope = (q - self._prev[1]) / (encode_ms - self._prev[0])
                self._grad += self.smoothing * (slope - self._grad)
            self._prev = (encode_ms, q)
            congested = congested or self._grad > self.gradient_threshold
        if congested and now_ms - self._last_cut >= self.hold_ms:
            self.rate = max(self.min_bps, self.rate * self.decrease)
            self._last_cut = now_ms


@dataclass
class Replay:
    """Replays per-frame targets recorded from another run so schemes share rate decisions."""

    targets: list

    def target(self, now_ms: float, frame_index: int = 0) -> float:
        return float(self.targets[min(frame_index, len(self.targets) - 1)])

    def on_feedback(self, now_ms, fb, encode_ms) -> None:
        pass


CONTROLLERS = ("oracle-trace", "delay-aimd")


def make_controller(name: str, trace, initial_bps=None):
    if name == "oracle-trace":
        return OracleTrace(trace)
    if name == "delay-aimd":
        start = ORACLE_SHARE * trace.rate_at(0.0) if initial_bps is None else initial_bps
        return DelayAIMD(start)
    raise ValueError(f"unknown controller {name!r}; choose from {', '.join(CONTROLLERS)}")
