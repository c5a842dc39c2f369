"""Experiment drivers shared by the CLI and the acceptance tests."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .codec import core
from .codec.core import QualityLevel, ReferenceState
from .media import BandwidthTrace, SyntheticSpec, synth_sequence
from .metrics import QualityReport, psnr, quality_report
from .netsim import NetConfig, Simulation
from .transport import fec, framing, make_controller, make_scheme
from .transport.baselines import SVC_BASE_REDUNDANCY, SVC_LAYERS
from .transport.grace import select_rung
from .transport.rate import Replay
from .transport.wire import FIXED_HEADER, MTU

DEFAULT_RATES = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)
SWEEP_SCHEMES = ("grace", "fec", "skip", "svc")


# ---------------------------------------------------------------- comparative sessions


@dataclass
class SessionResult:
    scheme: str
    timeline: object
    report: QualityReport
    targets: list
    conservation: bool
    counters: dict = field(default_factory=dict)


def compare(
    schemes,
    frames,
    trace: BandwidthTrace,
    controller: str = "delay-aimd",
    fps: float = 25.0,
    net_overrides: Optional[dict] = None,
    seed: int = 0,
    scheme_options: Optional[dict] = None,
) -> dict:
    """Run each scheme on the same frames and trace.

    The first scheme drives the rate controller live; the others replay its
    per-frame targets so every scheme sees identical rate decisions.
    """
    first = frames[0]
    width, height = first.width, first.height
    targets = None
    out = {}
    for name in schemes:
        sender, receiver = make_scheme(name, width, height, fps, **(scheme_options or {}).get(name, {}))
        ctl = make_controller(controller, trace) if targets is None else Replay(targets)
        net = NetConfig(trace, seed=seed, **(net_overrides or {}))
        sim = Simulation(sender, receiver, ctl, net, frames, fps=fps, scheme=name)
        timeline = sim.run()
        if targets is None:
            targets = list(sim.targets)
        out[name] = SessionResult(name, timeline, quality_report(timeline), list(sim.targets),
                                  sim.conservation_ok(), dict(receiver.counters))
    return out


# ---------------------------------------------------------------- loss sweep


@dataclass
class SweepPoint:
    rate: float
    mean: Optional[float]  # None: undecodable at this rate
    ci95: float
    decodable_frac: float
    seed_means: list = field(default_factory=list)


@dataclass
class SweepResult:
    rates: list
    seeds: int
    curves: dict  # scheme -> [SweepPoint]
    total_bytes: dict  # scheme -> bytes for the whole sequence
    lossless: dict  # scheme -> mean lossless PSNR
    rs_verified: int = 0  # frames whose Reed-Solomon recovery was checked byte-for-byte

    def rows(self) -> list:
        out = []
        for scheme, pts in self.curves.items():
            for p in pts:
                out.append({
                    "scheme": scheme,
                    "loss_rate": p.rate,
                    "mean_psnr": "undecodable" if p.mean is None else f"{p.mean:.4f}",
                    "ci95": f"{p.ci95:.4f}",
                    "decodable_frac": f"{p.decodable_frac:.4f}",
                    "total_bytes": self.total_bytes[scheme],
                })
        return out


def monotone_within_ci(points) -> bool:
    """Means never rise by more than the combined 95% interval of neighbouring rates."""
    for a, b in zip(points, points[1:]):
        if a.mean is None or b.mean is None:
            return False
        if b.mean > a.mean + math.hypot(a.ci95, b.ci95):
            return False
    return True


@dataclass
class _GraceFrame:
    enc: object
    layout: tuple
    maps: dict
    ref: Optional[ReferenceState]
    bytes: int
    n: int
    lossless: float


def _encode_grace(frames, budget: float, mtu: int, ipatch_k, start_rung: int) -> list:
    out = []
    ref = None
    rung = start_rung
    size_of = lambda e: framing.estimate_frame_bytes(e, mtu)  # noqa: E731
    for i, frame in enumerate(frames):
        if ref is None:
            enc = core.encode_i(frame, QualityLevel(rung), i)
        else:
            enc = core.encode_p(frame, ref, QualityLevel(rung), i, ipatch_k=ipatch_k)
        enc, _, _ = select_rung(enc, budget, size_of, core.RUNGS)
        rung = enc.rung
        packets, layout, maps = framing.packetize(enc, "grace", mtu)
        recon = core.decode(enc, ref)
        out.append(_GraceFrame(enc.drop_raw(), layout, maps, ref, sum(p.size for p in packets),
                               len(packets), psnr(frame, recon)))
        ref = ReferenceState(i, recon)
    return out


def _fec_total(stream_bytes: float, R: float, mtu: int) -> float:
    payload = mtu - FIXED_HEADER
    k = max(1, math.ceil(stream_bytes / payload))
    r = fec.parity_count(k, R)
    return (k + r) * (math.ceil(stream_bytes / k) + FIXED_HEADER)


def _svc_total(stream_bytes: float, mtu: int) -> float:
    payload = mtu - FIXED_HEADER
    base = stream_bytes / SVC_LAYERS
    kb = max(1, math.ceil(base / payload))
    rb = fec.parity_count(kb, SVC_BASE_REDUNDANCY)
    rest = stream_bytes - base
    return (kb + rb) * (math.ceil(base / kb) + FIXED_HEADER) + rest + math.ceil(rest / payload) * FIXED_HEADER


@dataclass
class _StreamFrame:
    stream: bytes
    k: int
    r: int
    shard_len: int
    layer_psnr: list  # svc: per received-layer count; others: [lossless]
    svc_counts: tuple = ()  # svc: packets per layer


def _encode_streams(frames, budgets, scheme: str, R: float, mtu: int, start_rung: int) -> list:
    """Clean-chain monolithic encodes whose running byte total tracks ``budgets``.

    Each frame may spend what the budget sequence has granted so far minus
    what earlier frames already used, so ladder granularity does not bias
    the totals.
    """
    out = []
    ref = None
    granted = spent = 0.0
    rung = start_rung
    payload = mtu - FIXED_HEADER
    if scheme == "fec":
        def size_of(e):
            return _fec_total(framing.estimate_stream_bytes(e), R, mtu)
    elif scheme == "svc":
        def size_of(e):
            return _svc_total(framing.estimate_stream_bytes(e), mtu)
    else:
        def size_of(e):
            s = framing.estimate_stream_bytes(e)
            return s + math.ceil(s / payload) * FIXED_HEADER
    for i, (frame, budget) in enumerate(zip(frames, budgets)):
        granted += budget
        if ref is None:
            enc = core.encode_i(frame, QualityLevel(rung), i)
        else:
            enc = core.encode_p(frame, ref, QualityLevel(rung), i)
        enc, _, _ = select_rung(enc, granted - spent, size_of, core.RUNGS)
        rung = enc.rung
        recon = core.decode(enc, ref)
        stream = framing.frame_to_stream(enc)
        if scheme == "fec":
            k = max(1, math.ceil(len(stream) / payload))
            r = fec.parity_count(k, R)
            out.append(_StreamFrame(stream, k, r, math.ceil(len(stream) / k), [psnr(frame, recon)]))
        elif scheme == "svc":
            layers = []
            for level in range(SVC_LAYERS - 1):
                share = len(stream) * (level + 1) / SVC_LAYERS
                pick = core.requantize_residual(enc, 0)
                for rr in range(enc.rung, -1, -1):
                    e = core.requantize_residual(enc, rr)
                    if framing.estimate_stream_bytes(e) <= share:
                        pick = e
                        break
                layers.append(psnr(frame, core.decode(pick, ref)))
            layers.append(psnr(frame, recon))
            base = math.ceil(len(stream) / SVC_LAYERS)
            kb = max(1, math.ceil(base / payload))
            rb = fec.parity_count(kb, SVC_BASE_REDUNDANCY)
            rest = [max(1, math.ceil((len(stream) - base) / (SVC_LAYERS - 1) / payload))] * (SVC_LAYERS - 1)
            out.append(_StreamFrame(stream, kb, rb, 0, layers, (kb + rb, *rest)))
        else:
            k = max(1, math.ceil(len(stream) / payload))
            out.append(_StreamFrame(stream, k, 0, 0, [psnr(frame, recon)]))
        spent += _stream_bytes(out[-1], scheme)
        ref = ReferenceState(i, recon)
    return out


def _stream_bytes(sf: _StreamFrame, scheme: str) -> int:
    if scheme == "fec":
        return (sf.k + sf.r) * (sf.shard_len + FIXED_HEADER)
    if scheme == "svc":
        return len(sf.stream) + sum(sf.svc_counts) * FIXED_HEADER + sf.r * math.ceil(len(sf.stream) / SVC_LAYERS / sf.k)
    return len(sf.stream) + sf.k * FIXED_HEADER


def _ci95(seed_means) -> float:
    if len(seed_means) < 2:
        return 0.0
    return 1.96 * float(np.std(seed_means, ddof=1)) / math.sqrt(len(seed_means))


def loss_sweep(
    frames,
    rates=DEFAULT_RATES,
    seeds: int = 20,
    budget_bps: float = 6e6,
    fps: float = 25.0,
    schemes=("grace", "fec"),
    fec_redundancy: float = 0.5,
    seed: int = 0,
    mtu: int = MTU,
    ipatch_k: Optional[int] = 30,
    start_rung: int = 5,
) -> SweepResult:
    """Quality against packet loss rate at matched bytes, one frame at a time.

    Every frame is encoded once on a clean reference chain. For each rate and
    seed, exactly ``ceil(rate * n)`` of the frame's ``n`` packets are dropped
    and the frame is decoded against its clean reference, so the curve shows
    how one frame degrades, without error propagation. Baseline encodes get
    a per-frame byte budget equal to what the grace encode of that frame
    used.
    """
    for r in rates:
        if not 0 <= r <= 0.9:
            raise ValueError(f"loss rate {r} outside [0, 0.9]")
    for s in schemes:
        if s not in SWEEP_SCHEMES:
            raise ValueError(f"loss sweep supports {', '.join(SWEEP_SCHEMES)}, not {s!r}")
    budget = budget_bps / fps / 8
    g = _encode_grace(frames, budget, mtu, ipatch_k, start_rung)
    budgets = [x.bytes for x in g]
    streams = {s: _encode_streams(frames, budgets, s, fec_redundancy, mtu, start_rung)
               for s in schemes if s != "grace"}
    root = np.random.SeedSequence(seed)
    children = root.spawn(len(rates) * seeds)
    curves: dict = {s: [] for s in schemes}
    rs_checked = 0
    for ri, rate in enumerate(rates):
        per_seed: dict = {s: [] for s in schemes}
        decodable: dict = {s: 0 for s in schemes}
        for si in range(seeds):
            rng = np.random.default_rng(children[ri * seeds + si])
            vals: dict = {s: [] for s in schemes}
            for fi, frame in enumerate(frames):
                if "grace" in schemes:
                    gf = g[fi]
                    if rate == 0:
                        vals["grace"].append(gf.lossless)
                    else:
                        bm = np.ones(gf.n, dtype=bool)
                        bm[rng.choice(gf.n, math.ceil(rate * gf.n - 1e-9), replace=False)] = False
                        rec = framing.reception_from_bitmap(gf.enc, gf.layout, gf.maps, bm)
                        if rec is None:
                            vals["grace"].append(None)
                        else:
                            vals["grace"].append(psnr(frame, core.decode(gf.enc, gf.ref, rec)))
                for s, sfs in streams.items():
                    q, checked = _stream_quality(sfs[fi], s, rate, rng, verify=(si == 0))
                    rs_checked += checked
                    vals[s].append(q)
            for s in schemes:
                ok = [v for v in vals[s] if v is not None]
                decodable[s] += len(ok)
                if ok:
                    per_seed[s].append(float(np.mean(ok)))
        for s in schemes:
            frac = decodable[s] / (seeds * len(frames))
            if per_seed[s] and frac == 1.0:
                pt = SweepPoint(rate, float(np.mean(per_seed[s])), _ci95(per_seed[s]), frac, per_seed[s])
            elif per_seed[s] and s == "grace":
                pt = SweepPoint(rate, float(np.mean(per_seed[s])), _ci95(per_seed[s]), frac, per_seed[s])
            else:
                pt = SweepPoint(rate, None, 0.0, frac, per_seed[s])
            curves[s].append(pt)
    total = {"grace": sum(budgets)} if "grace" in schemes else {}
    for s, sfs in streams.items():
        total[s] = sum(_stream_bytes(x, s) for x in sfs)
    lossless = {"grace": float(np.mean([x.lossless for x in g]))}
    for s, sfs in streams.items():
        lossless[s] = float(np.mean([x.layer_psnr[-1] for x in sfs]))
    return SweepResult(list(rates), seeds, curves, total, lossless, rs_checked)


def _stream_quality(sf: _StreamFrame, scheme: str, rate: float, rng, verify: bool):
    """(quality or None, number of Reed-Solomon recoveries checked)."""
    if scheme == "svc":
        n = sum(sf.svc_counts)
        lost = np.zeros(n, dtype=bool)
        lost[rng.choice(n, math.ceil(rate * n - 1e-9), replace=False)] = True
        edges = np.cumsum((0,) + sf.svc_counts)
        base_lost = lost[edges[0]:edges[1]].sum()
        if sf.svc_counts[0] - base_lost < sf.k:
            return None, 0
        level = 0
        for li in range(1, SVC_LAYERS):
            if lost[edges[li]:edges[li + 1]].any():
                break
            level = li
        return sf.layer_psnr[level], 0
    n = sf.k + sf.r
    drop = math.ceil(rate * n - 1e-9)
    lost = rng.choice(n, drop, replace=False)
    if scheme == "skip":
        return (sf.layer_psnr[0] if drop == 0 else None), 0
    if n - drop < sf.k:
        return None, 0
    if verify and drop:
        shards = fec.encode(sf.stream, sf.k, sf.r)
        keep = {i: shards[i] for i in range(n) if i not in set(lost.tolist())}
        if fec.decode(keep, sf.k, len(sf.stream)) != sf.stream:
            raise AssertionError("Reed-Solomon recovery returned different bytes")
        return sf.layer_psnr[0], 1
    return sf.layer_psnr[0], 0


# ---------------------------------------------------------------- codec benchmark


def codec_bench(frames, rungs=range(core.RUNGS), mtu: int = MTU) -> dict:
    """Encode/decode throughput plus per-rung size and quality on a short clip."""
    frames = list(frames)
    if len(frames) < 2:
        raise ValueError("codec bench needs at least two frames")
    ref = core.lossless_reference(core.encode_i(frames[0], core.FINEST, 0), None)
    core.encode_p(frames[1], ref, core.FINEST, 1)  # compile kernels outside the timed region
    enc_t = dec_t = redec_t = 0.0
    encs = []
    for i, f in enumerate(frames[1:], start=1):
        t0 = time.perf_counter()
        e = core.encode_p(f, ref, core.FINEST, i)
        t1 = time.perf_counter()
        d = core.decode(e, ref)
        t2 = time.perf_counter()
        enc_t += t1 - t0
        dec_t += t2 - t1
        encs.append((e, ref))
        ref = ReferenceState(i, d)
    t0 = time.perf_counter()
    core.fast_redecode([(e, core.Reception.full(e)) for e, _ in encs[: core.CACHE_WINDOW]], encs[0][1])
    redec_t = (time.perf_counter() - t0) / min(len(encs), core.CACHE_WINDOW)
    count = len(encs)
    table = []
    e_mid, r_mid = encs[len(encs) // 2]
    src = frames[e_mid.frame_id]
    for r in rungs:
        e = core.requantize_residual(e_mid, r)
        pk, _, _ = framing.packetize(e, "grace", mtu)
        table.append({
            "rung": r,
            "step": QualityLevel(r).step,
            "bytes": sum(p.size for p in pk),
            "packets": len(pk),
            "psnr_db": psnr(src, core.decode(e, r_mid)),
        })
    return {
        "width": frames[0].width,
        "height": frames[0].height,
        "frames": count,
        "encode_fps": count / enc_t if enc_t else float("inf"),
        "decode_fps": count / dec_t if dec_t else float("inf"),
        "redecode_ms_per_frame": redec_t * 1000,
        "encode_ms_per_frame": enc_t / count * 1000,
        "rungs": table,
    }


# ---------------------------------------------------------------- canned scenarios

STEP_SIZE = (480, 272)
STEP_SEGMENTS = ((5.0, 8e6), (5.0, 2e6), (5.0, 8e6))


def step_scenario(segment_s: float = 5.0, width: int = STEP_SIZE[0], height: int = STEP_SIZE[1], seed: int = 0):
    """Textured synthetic video over an 8, 2, 8 Mbps step trace."""
    trace = BandwidthTrace.steps([(segment_s, r) for _, r in STEP_SEGMENTS])
    spec = SyntheticSpec("textured-noise", width=width, height=height, seed=seed)
    frames = synth_sequence(spec, int(round(3 * segment_s * 25))).frames
    return frames, trace
