"""Quality and QoE measurements: PSNR, SSIM / SSIM-dB, frame delay, stalls."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.ndimage import correlate1d

PSNR_CAP = 99.0
SSIM_DB_CAP = 60.0
STALL_GAP_MS = 200.0
NON_RENDER_MS = 400.0
FRAME_INTERVAL_MS = 40.0

_K1, _K2, _L = 0.01, 0.03, 255.0
_WIN, _SIGMA = 11, 1.5


def _luma(x) -> np.ndarray:
    a = getattr(x, "luma", x)
    return np.asarray(a, dtype=np.float64)


def mse(a, b) -> float:
    x, y = _luma(a), _luma(b)
    if x.shape != y.shape:
        raise ValueError(f"frame size mismatch: {x.shape} vs {y.shape}")
    return float(np.mean((x - y) ** 2))


def psnr(a, b) -> float:
    """Luma PSNR in dB; identical frames report the 99 dB sentinel."""
    e = mse(a, b)
    if e == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10 * math.log10(_L**2 / e))


@lru_cache(maxsize=1)
def _taps() -> np.ndarray:
    r = np.arange(_WIN) - _WIN // 2
    g = np.exp(-(r**2) / (2 * _SIGMA**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray) -> np.ndarray:
    """Separable Gaussian filter keeping only fully-covered window positions."""
    g = _taps()
    half = _WIN // 2
    out = correlate1d(correlate1d(img, g, axis=0), g, axis=1)
    return out[half : img.shape[0] - half, half : img.shape[1] - half]


def ssim_map(a, b) -> np.ndarray:
    x, y = _luma(a), _luma(b)
    if x.shape != y.shape:
        raise ValueError(f"frame size mismatch: {x.shape} vs {y.shape}")
    if min(x.shape) < _WIN:
        raise ValueError(f"frames smaller than the {_WIN}x{_WIN} SSIM window")
    filt = _filter_valid
    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    c1, c2 = (_K1 * _L) ** 2, (_K2 * _L) ** 2
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return num / den


def ssim(a, b) -> float:
    """Mean SSIM over all fully-covered 11x11 Gaussian windows of the luma plane."""
    x, y = _luma(a), _luma(b)
    if x.shape == y.shape and np.array_equal(x, y):
        return 1.0
    return float(ssim_map(x, y).mean())


def ssim_db(s: float) -> float:
    if s >= 1.0:
        return SSIM_DB_CAP
    return min(SSIM_DB_CAP, -10 * math.log10(1 - s))


# ---------------------------------------------------------------- session timeline


@dataclass
class FrameRecord:
    frame_id: int
    encode_time: float  # ms, when encoding starts
    first_send: Optional[float] = None
    last_send: Optional[float] = None
    packets_sent: int = 0
    packets_received: int = 0
    bytes_sent: int = 0
    decode_time: Optional[float] = None
    render_time: Optional[float] = None
    psnr: Optional[float] = None
    ssim: Optional[float] = None
    rung: Optional[int] = None
    overshoot: bool = False
    decodable: bool = True
    note: str = ""

    @property
    def delay(self) -> Optional[float]:
        if self.decode_time is None:
            return None
        return self.decode_time - self.encode_time

    @property
    def rendered(self) -> bool:
        d = self.delay
        return self.decodable and d is not None and d <= NON_RENDER_MS


@dataclass
class SessionTimeline:
    frames: list = field(default_factory=list)
    events: list = field(default_factory=list)  # per-packet dicts
    frame_interval: float = FRAME_INTERVAL_MS
    scheme: str = ""

    def record(self, frame_id: int) -> FrameRecord:
        return self.frames[frame_id]

    def frames_csv(self) -> str:
        cols = [
            "frame_id", "encode_time_ms", "first_send_ms", "last_send_ms", "packets_sent",
            "packets_received", "bytes_sent", "decode_time_ms", "render_time_ms", "delay_ms",
            "rendered", "psnr_db", "ssim", "ssim_db", "rung", "overshoot", "note",
        ]
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(cols)
        for r in self.frames:
            w.writerow([
                r.frame_id, _fmt(r.encode_time), _fmt(r.first_send), _fmt(r.last_send), r.packets_sent,
                r.packets_received, r.bytes_sent, _fmt(r.decode_time), _fmt(r.render_time), _fmt(r.delay),
                int(r.rendered), _fmt(r.psnr), _fmt(r.ssim, 6),
                _fmt(None if r.ssim is None else ssim_db(r.ssim)), "" if r.rung is None else r.rung,
                int(r.overshoot), r.note,
            ])
        return out.getvalue()

    def events_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.events)


def _fmt(v, digits=3) -> str:
    return "" if v is None else f"{v:.{digits}f}"


def percentile_nearest_rank(values, pct: float) -> float:
    v = sorted(values)
    if not v:
        raise ValueError("no values")
    rank = max(1, math.ceil(pct / 100 * len(v)))
    return float(v[rank - 1])


def delay_stats(timeline) -> dict:
    """Mean and nearest-rank P98 of encode-to-decode delay over rendered frames."""
    frames = timeline.frames if hasattr(timeline, "frames") else timeline
    delays = [r.delay for r in frames if r.rendered]
    if not delays:
        raise ValueError("no rendered frames in timeline")
    return {"mean": float(np.mean(delays)), "p98": percentile_nearest_rank(delays, 98)}


def smoothness(timeline, frame_interval: float = FRAME_INTERVAL_MS) -> dict:
    frames = timeline.frames if hasattr(timeline, "frames") else timeline
    total = len(frames)
    if total == 0:
        return {"non_rendered_frac": 0.0, "stalls_per_s": 0.0, "stall_ratio": 0.0, "stalls": 0}
    rendered = [r for r in frames if r.rendered]
    non_rendered = total - len(rendered)
    times = sorted(r.render_time for r in rendered)
    stalls = 0
    stall_time = 0.0
    for a, b in zip(times, times[1:]):
        gap = b - a
        if gap > STALL_GAP_MS:
            stalls += 1
            stall_time += gap - frame_interval
    length_ms = total * frame_interval
    return {
        "non_rendered_frac": non_rendered / total,
        "stalls_per_s": stalls / (length_ms / 1000.0),
        "stall_ratio": min(1.0, stall_time / length_ms),
        "stalls": stalls,
    }


@dataclass
class QualityReport:
    scheme: str
    frames: int
    rendered: int
    mean_ssim_db: float
    mean_psnr: float
    mean_delay_ms: float
    p98_delay_ms: float
    non_rendered_frac: float
    stalls_per_s: float
    stall_ratio: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def csv_row(self) -> list:
        return [self.scheme, self.frames, self.rendered, *(f"{v:.6f}" for v in (
            self.mean_ssim_db, self.mean_psnr, self.mean_delay_ms, self.p98_delay_ms,
            self.non_rendered_frac, self.stalls_per_s, self.stall_ratio))]

    CSV_HEADER = [
        "scheme", "frames", "rendered", "mean_ssim_db", "mean_psnr", "mean_delay_ms",
        "p98_delay_ms", "non_rendered_frac", "stalls_per_s", "stall_ratio",
    ]


def quality_report(timeline: SessionTimeline) -> QualityReport:
    rendered = [r for r in timeline.frames if r.rendered]
    sm = smoothness(timeline, timeline.frame_interval)
    if rendered:
        ds = delay_stats(timeline)
        q_db = float(np.mean([ssim_db(r.ssim) for r in rendered if r.ssim is not None] or [0.0]))
        q_psnr = float(np.mean([r.psnr for r in rendered if r.psnr is not None] or [0.0]))
    else:
        ds = {"mean": 0.0, "p98": 0.0}
        q_db = q_psnr = 0.0
    return QualityReport(
        timeline.scheme, len(timeline.frames), len(rendered), q_db, q_psnr, ds["mean"], ds["p98"],
        sm["non_rendered_frac"], sm["stalls_per_s"], sm["stall_ratio"],
    )
