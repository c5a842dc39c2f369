"""Frames, synthetic sources, Y4M video I/O and bandwidth traces."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MACROBLOCK = 16
TRACE_STEP = 0.1  # seconds


class Y4MError(ValueError):
    pass


class TraceError(ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.uint8)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Frame:
    """One picture: a luma plane and optionally two 4:2:0 chroma planes."""

    planes: tuple
    frame_index: int = 0

    def __post_init__(self):
        if not self.planes:
            raise ValueError("frame needs at least a luma plane")
        planes = tuple(_frozen(p) for p in self.planes)
        h, w = planes[0].shape
        if h <= 0 or w <= 0 or h % MACROBLOCK or w % MACROBLOCK:
            raise ValueError(
                f"frame {w}x{h} is not macroblock aligned; pad to a multiple of {MACROBLOCK}"
            )
        if len(planes) not in (1, 3):
            raise ValueError("frame must be luma-only or Y,Cb,Cr")
        if len(planes) == 3:
            for p in planes[1:]:
                if p.shape != (h // 2, w // 2):
                    raise ValueError(f"chroma plane {p.shape} does not match 4:2:0 of {w}x{h}")
        object.__setattr__(self, "planes", planes)

    @classmethod
    def from_luma(cls, luma, frame_index: int = 0) -> "Frame":
        return cls((np.asarray(luma),), frame_index)

    @property
    def luma(self) -> np.ndarray:
        return self.planes[0]

    @property
    def width(self) -> int:
        return self.planes[0].shape[1]

    @property
    def height(self) -> int:
        return self.planes[0].shape[0]

    @property
    def is_mono(self) -> bool:
        return len(self.planes) == 1

    def same_pixels(self, other: "Frame") -> bool:
        return len(self.planes) == len(other.planes) and all(
            np.array_equal(a, b) for a, b in zip(self.planes, other.planes)
        )


@dataclass
class VideoSequence:
    frames: list
    width: int
    height: int
    fps: float = 25.0
    colorspace: str = "420jpeg"  # or "mono"
    header_extra: list = field(default_factory=list)

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, i):
        return self.frames[i]

    def __iter__(self):
        return iter(self.frames)


# ---------------------------------------------------------------- Y4M

_MONO = {"mono"}
_420 = {"420", "420jpeg", "420paldv", "420mpeg2"}


def _parse_fps(token: str) -> float:
    num, _, den = token[1:].partition(":")
    try:
        num_i, den_i = int(num), int(den or 1)
    except ValueError:
        raise Y4MError(f"malformed frame-rate token {token!r}") from None
    if den_i == 0:
        raise Y4MError(f"malformed frame-rate token {token!r}")
    return num_i / den_i


def parse_y4m(data: bytes) -> VideoSequence:
    nl = data.find(b"\n")
    if nl < 0:
        raise Y4MError("missing header terminator")
    tokens = data[:nl].decode("ascii", errors="replace").split(" ")
    if tokens[0] != "YUV4MPEG2":
        raise Y4MError(f"bad signature {tokens[0]!r}, expected 'YUV4MPEG2'")
    width = height = None
    fps = 25.0
    cs = "420jpeg"
    extra = []
    for tok in tokens[1:]:
        if not tok:
            continue
        tag, val = tok[0], tok[1:]
        if tag in "WH":
            try:
                v = int(val)
            except ValueError:
                raise Y4MError(f"malformed dimension token {tok!r}") from None
            if v <= 0:
                raise Y4MError(f"malformed dimension token {tok!r}")
            if tag == "W":
                width = v
            else:
                height = v
        elif tag == "F":
            fps = _parse_fps(tok)
        elif tag == "C":
            if val not in _MONO | _420:
                raise Y4MError(f"unsupported colorspace token {tok!r} (8-bit 4:2:0 or mono only)")
            cs = val
        elif tag in "IAX":
            extra.append(tok)
        else:
            raise Y4MError(f"unknown header token {tok!r}")
    if width is None or height is None:
        raise Y4MError("header lacks W or H token")
    if width % MACROBLOCK or height % MACROBLOCK:
        raise Y4MError(
            f"dimensions {width}x{height} are not multiples of {MACROBLOCK}; "
            f"pad first (rtvlab pad-video)"
        )

    mono = cs in _MONO
    ysize = width * height
    csize = 0 if mono else (width // 2) * (height // 2)
    fsize = ysize + 2 * csize
    frames = []
    pos = nl + 1
    while pos < len(data):
        end = data.find(b"\n", pos)
        if end < 0 or not data[pos:end].startswith(b"FRAME"):
            raise Y4MError(f"bad frame marker at byte {pos}: {data[pos:pos + 5]!r}")
        start = end + 1
        if start + fsize > len(data):
            raise Y4MError(f"truncated frame {len(frames)}")
        buf = np.frombuffer(data, dtype=np.uint8, count=fsize, offset=start)
        y = buf[:ysize].reshape(height, width)
        if mono:
            planes = (y,)
        else:
            cb = buf[ysize:ysize + csize].reshape(height // 2, width // 2)
            cr = buf[ysize + csize:].reshape(height // 2, width // 2)
            planes = (y, cb, cr)
        frames.append(Frame(planes, len(frames)))
        pos = start + fsize
    return VideoSequence(frames, width, height, fps, cs, extra)


def load_y4m(path) -> VideoSequence:
    return parse_y4m(Path(path).read_bytes())


def _fps_token(fps: float) -> str:
    if float(fps).is_integer():
        return f"F{int(fps)}:1"
    return f"F{round(fps * 1000)}:1000"


def dump_y4m(seq: VideoSequence) -> bytes:
    out = io.BytesIO()
    mono = bool(seq.frames) and seq.frames[0].is_mono
    cs = "mono" if mono else (seq.colorspace if seq.colorspace in _420 else "420jpeg")
    head = ["YUV4MPEG2", f"W{seq.width}", f"H{seq.height}", _fps_token(seq.fps)]
    head += [t for t in seq.header_extra if not t.startswith("C")]
    head.append(f"C{cs}")
    out.write((" ".join(head) + "\n").encode("ascii"))
    for f in seq.frames:
        out.write(b"FRAME\n")
        for p in f.planes:
            out.write(p.tobytes())
    return out.getvalue()


def write_y4m(path, seq: VideoSequence) -> None:
    Path(path).write_bytes(dump_y4m(seq))


def pad_frame(frame: Frame, multiple: int = MACROBLOCK) -> Frame:
    """Edge-replicate a frame up to the next multiple of ``multiple``."""
    y = frame.planes[0]
    h, w = y.shape
    ph, pw = -h % multiple, -w % multiple
    planes = [np.pad(y, ((0, ph), (0, pw)), mode="edge")]
    for c in frame.planes[1:]:
        planes.append(np.pad(c, ((0, ph // 2), (0, pw // 2)), mode="edge"))
    return Frame(tuple(planes), frame.frame_index)


def pad_y4m_bytes(data: bytes, multiple: int = MACROBLOCK) -> bytes:
    """Pad an unaligned Y4M stream; the loader itself refuses such files."""
    nl = data.find(b"\n")
    tokens = data[:nl].decode("ascii").split(" ")
    w = next(int(t[1:]) for t in tokens if t.startswith("W"))
    h = next(int(t[1:]) for t in tokens if t.startswith("H"))
    pw, ph = w + (-w % multiple), h + (-h % multiple)
    fixed = [f"W{pw}" if t.startswith("W") else f"H{ph}" if t.startswith("H") else t for t in tokens]
    cs = next((t[1:] for t in tokens if t.startswith("C")), "420jpeg")
    mono = cs in _MONO
    ysize = w * h
    csize = 0 if mono else (w // 2) * (h // 2)
    out = io.BytesIO()
    out.write((" ".join(fixed) + "\n").encode("ascii"))
    pos = nl + 1
    while pos < len(data):
        end = data.find(b"\n", pos)
        start = end + 1
        buf = np.frombuffer(data, dtype=np.uint8, count=ysize + 2 * csize, offset=start)
        y = np.pad(buf[:ysize].reshape(h, w), ((0, ph - h), (0, pw - w)), mode="edge")
        out.write(b"FRAME\n")
        out.write(y.tobytes())
        if not mono:
            for k in range(2):
                c = buf[ysize + k * csize: ysize + (k + 1) * csize].reshape(h // 2, w // 2)
                c = np.pad(c, ((0, ph // 2 - h // 2), (0, pw // 2 - w // 2)), mode="edge")
                out.write(c.tobytes())
        pos = start + ysize + 2 * csize
    return out.getvalue()


# ---------------------------------------------------------------- synthetic sources

PATTERNS = ("moving-gradient", "checkerboard", "textured-noise")


@dataclass(frozen=True)
class SyntheticSpec:
    pattern: str = "textured-noise"
    width: int = 640
    height: int = 352
    velocity: tuple = (2, 1)
    seed: int = 0
    # per-frame temporal noise amplitude; only the textured pattern uses it
    temporal_noise: float = 1.0
    square: int = 16

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown pattern {self.pattern!r}; choose from {PATTERNS}")
        if self.width % MACROBLOCK or self.height % MACROBLOCK or self.width <= 0 or self.height <= 0:
            raise ValueError(f"synthetic size {self.width}x{self.height} must be macroblock aligned")
        object.__setattr__(self, "velocity", tuple(int(v) for v in self.velocity))


def _base_image(spec: SyntheticSpec) -> np.ndarray:
    h, w = spec.height, spec.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    if spec.pattern == "moving-gradient":
        img = (
            128
            + 60 * np.sin(2 * np.pi * xx / w)
            + 40 * np.cos(2 * np.pi * yy / h)
            + 20 * np.sin(2 * np.pi * (xx / w + 2 * yy / h))
        )
    elif spec.pattern == "checkerboard":
        s = spec.square
        img = np.where(((xx // s) + (yy // s)) % 2 == 0, 48.0, 208.0)
    else:
        rng = np.random.default_rng(spec.seed)
        # periodic smooth texture: low-pass filtered white noise in the Fourier domain
        noise = rng.standard_normal((h, w))
        fy = np.fft.fftfreq(h)[:, None]
        fx = np.fft.fftfreq(w)[None, :]
        shaped = np.fft.ifft2(np.fft.fft2(noise) / (1.0 + 60.0 * np.hypot(fx, fy))).real
        shaped = (shaped - shaped.mean()) / (shaped.std() + 1e-12)
        img = 128 + 38 * shaped + 10 * rng.standard_normal((h, w))
    return img


_BASE_CACHE: dict = {}


def synth_frame(spec: SyntheticSpec, frame_index: int) -> Frame:
    """Deterministic frame ``frame_index`` of a synthetic source (wraparound translation)."""
    base = _BASE_CACHE.get(spec)
    if base is None:
        base = _BASE_CACHE[spec] = _base_image(spec)
    vx, vy = spec.velocity
    img = np.roll(base, shift=(vy * frame_index, vx * frame_index), axis=(0, 1))
    if spec.pattern == "textured-noise" and spec.temporal_noise > 0:
        rng = np.random.default_rng([spec.seed, frame_index])
        img = img + spec.temporal_noise * rng.standard_normal(img.shape)
    luma = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return Frame.from_luma(luma, frame_index)


def synth_sequence(spec: SyntheticSpec, count: int, fps: float = 25.0) -> VideoSequence:
    frames = [synth_frame(spec, i) for i in range(count)]
    return VideoSequence(frames, spec.width, spec.height, fps, "mono")


# ---------------------------------------------------------------- bandwidth traces


@dataclass(frozen=True)
class BandwidthTrace:
    """Bandwidth samples on a uniform 0.1 s grid starting at t=0."""

    rates: np.ndarray  # bits per second

    def __post_init__(self):
        r = np.asarray(self.rates, dtype=np.float64).copy()
        if r.ndim != 1 or r.size == 0:
            raise TraceError("trace needs at least one sample")
        if np.any(r < 0) or not np.all(np.isfinite(r)):
            raise TraceError("trace rates must be finite and non-negative")
        r.flags.writeable = False
        object.__setattr__(self, "rates", r)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.rates.size) / 10.0

    @property
    def duration(self) -> float:
        return self.rates.size * TRACE_STEP

    def slot(self, t: float) -> int:
        """Index of the sample in force at time ``t`` (held after the end)."""
        k = int(math.floor(t * 10.0 + 1e-9))
        return min(max(k, 0), self.rates.size - 1)

    def rate_at(self, t: float) -> float:
        return float(self.rates[self.slot(t)])

    @classmethod
    def constant(cls, bps: float, duration: float) -> "BandwidthTrace":
        return cls(np.full(int(round(duration * 10)) + 1, float(bps)))

    @classmethod
    def steps(cls, segments: Sequence[tuple]) -> "BandwidthTrace":
        """Piecewise-constant trace from ``[(seconds, bps), ...]``."""
        parts = [np.full(int(round(d * 10)), float(r)) for d, r in segments]
        return cls(np.concatenate(parts))


def resample_trace(times: Sequence[float], rates: Sequence[float]) -> BandwidthTrace:
    t = np.asarray(times, dtype=np.float64)
    r = np.asarray(rates, dtype=np.float64)
    if t.size == 0:
        raise TraceError("empty trace")
    if np.any(np.diff(t) <= 0):
        bad = int(np.argmax(np.diff(t) <= 0)) + 1
        raise TraceError(f"timestamps not strictly increasing at sample {bad} (t={t[bad]})")
    if np.any(t < 0):
        raise TraceError("negative timestamp")
    if np.any(r < 0):
        bad = int(np.argmax(r < 0))
        raise TraceError(f"negative rate at sample {bad} (t={t[bad]})")
    count = int(math.floor(t[-1] * 10 + 1e-9)) + 1
    grid = np.arange(count) / 10.0
    return BandwidthTrace(np.interp(grid, t, r))


def parse_trace(text: str) -> BandwidthTrace:
    times, rates = [], []
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), 1):
        if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
            continue
        if len(row) < 2:
            raise TraceError(f"line {lineno}: expected 'time_s,bandwidth_bps'")
        try:
            t, r = float(row[0]), float(row[1])
        except ValueError:
            if not times:
                continue  # header line
            raise TraceError(f"line {lineno}: non-numeric field in {row!r}") from None
        times.append(t)
        rates.append(r)
    return resample_trace(times, rates)


def load_trace(path) -> BandwidthTrace:
    return parse_trace(Path(path).read_text())


def dump_trace(trace: BandwidthTrace) -> str:
    lines = ["time_s,bandwidth_bps"]
    lines += [f"{i / 10:.1f},{r:.0f}" for i, r in enumerate(trace.rates)]
    return "\n".join(lines) + "\n"


def mahimahi_to_trace(lines: Iterable[str], mtu: int = 1500) -> BandwidthTrace:
    """Convert a Mahimahi delivery-opportunity trace (ms timestamps) to 0.1 s bandwidth bins."""
    stamps = [int(s) for s in (l.strip() for l in lines) if s]
    if not stamps:
        raise TraceError("empty mahimahi trace")
    bins = np.zeros(stamps[-1] // 100 + 1)
    for ms in stamps:
        bins[ms // 100] += mtu * 8
    return BandwidthTrace(bins * 10.0)
