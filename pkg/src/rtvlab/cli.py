"""Command line entry point: ``rtvlab <subcommand> [options]``.

Exit status is 0 on success, 2 when the configuration or an input file is
invalid, and 1 when a run fails part way. Outputs are staged in a scratch
directory next to ``--out`` and moved into place only after the run
completes, so a failed run leaves nothing behind.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import platform
import shutil
import sys
import tempfile
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from . import __version__, experiments
from .loss_lab import grad_check
from .media import (
    BandwidthTrace,
    SyntheticSpec,
    TraceError,
    Y4MError,
    dump_trace,
    load_trace,
    load_y4m,
    mahimahi_to_trace,
    pad_y4m_bytes,
    parse_trace,
    synth_sequence,
)
from .metrics import QualityReport
from .transport import SCHEMES
from .transport.rate import CONTROLLERS

log = logging.getLogger("rtvlab")


class UsageError(Exception):
    """Bad configuration or input; maps to exit status 2."""


# ---------------------------------------------------------------- configuration


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SyntheticSource(_Strict):
    pattern: Literal["moving-gradient", "checkerboard", "textured-noise"] = "textured-noise"
    width: int = 640
    height: int = 352
    velocity: tuple[int, int] = (2, 1)
    seed: int = 0
    temporal_noise: float = Field(1.0, ge=0)
    frames: int = Field(250, ge=2)


class FileSource(_Strict):
    path: str
    frames: Optional[int] = Field(None, ge=2)


class StepTrace(_Strict):
    segments: list[tuple[float, float]]  # (seconds, bps)


class ConstantTrace(_Strict):
    bps: float = Field(gt=0)
    seconds: float = Field(gt=0)


class NetOverrides(_Strict):
    one_way_delay_ms: float = Field(100.0, ge=0)
    queue_capacity: int = Field(25, ge=1)
    random_loss: float = Field(0.0, ge=0, lt=1)


class SimulateConfig(_Strict):
    schemes: list[str] = ["grace", "fec", "skip"]
    video: Union[SyntheticSource, FileSource] = SyntheticSource(width=480, height=272, frames=375)
    trace: Union[str, StepTrace, ConstantTrace] = StepTrace(segments=[(5, 8e6), (5, 2e6), (5, 8e6)])
    controller: str = "delay-aimd"
    net: NetOverrides = NetOverrides()
    fps: float = Field(25.0, gt=0)
    mtu: int = Field(1200, ge=200, le=65535)
    seed: int = 0

    @field_validator("schemes")
    @classmethod
    def _schemes(cls, v):
        for s in v:
            if s not in SCHEMES:
                raise ValueError(f"unknown scheme {s!r}; choose from {', '.join(SCHEMES)}")
        if not v or len(set(v)) != len(v):
            raise ValueError("schemes must be a non-empty list without repeats")
        return v

    @field_validator("controller")
    @classmethod
    def _controller(cls, v):
        if v not in CONTROLLERS:
            raise ValueError(f"unknown controller {v!r}; choose from {', '.join(CONTROLLERS)}")
        return v


class LossSweepConfig(_Strict):
    schemes: list[str] = ["grace", "fec"]
    video: Union[SyntheticSource, FileSource] = SyntheticSource()
    rates: list[float] = list(experiments.DEFAULT_RATES)
    seeds: int = Field(20, ge=1)
    budget_bps: float = Field(6e6, gt=0)
    fec_redundancy: float = Field(0.5, gt=0, lt=1)
    ipatch_k: Optional[int] = Field(30, ge=1)
    fps: float = Field(25.0, gt=0)
    seed: int = 0

    @field_validator("schemes")
    @classmethod
    def _schemes(cls, v):
        for s in v:
            if s not in experiments.SWEEP_SCHEMES:
                raise ValueError(f"loss sweep supports {', '.join(experiments.SWEEP_SCHEMES)}, not {s!r}")
        return v

    @field_validator("rates")
    @classmethod
    def _rates(cls, v):
        bad = [r for r in v if not 0 <= r <= 0.9]
        if bad:
            raise ValueError(f"loss rates must lie in [0, 0.9]; got {bad}")
        return v


class CodecBenchConfig(_Strict):
    video: Union[SyntheticSource, FileSource] = SyntheticSource(width=1280, height=720, frames=10)


class GradCheckConfig(_Strict):
    k: int = Field(8, ge=1, le=12)
    d: int = Field(6, ge=1)
    rate: float = Field(0.25, ge=0, le=1)
    n: int = Field(100_000, ge=1)
    tolerance: float = Field(0.05, gt=0)
    seed: int = 0


def _load_config(model, path: Optional[str]):
    if path is None:
        return model()
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"config {path} is not valid JSON: {e}") from None
    return model.model_validate(raw)


def _canonical(cfg: BaseModel) -> str:
    return json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))


def _manifest(command: str, cfg: BaseModel, files: list) -> dict:
    return {
        "command": command,
        "config": cfg.model_dump(mode="json"),
        "config_sha256": hashlib.sha256(_canonical(cfg).encode()).hexdigest(),
        "seed": getattr(cfg, "seed", None),
        "outputs": sorted(files),
        "versions": {
            "rtvlab": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
    }


# ---------------------------------------------------------------- inputs


def _frames(src):
    if isinstance(src, FileSource):
        try:
            seq = load_y4m(src.path)
        except FileNotFoundError:
            raise UsageError(f"video file not found: {src.path}") from None
        frames = seq.frames if src.frames is None else seq.frames[: src.frames]
        if len(frames) < 2:
            raise UsageError("video needs at least two frames")
        return frames, seq.fps
    try:
        spec = SyntheticSpec(src.pattern, src.width, src.height, src.velocity, src.seed, src.temporal_noise)
    except ValueError as e:
        raise UsageError(str(e)) from None
    return synth_sequence(spec, src.frames).frames, None


def _trace(t) -> BandwidthTrace:
    if isinstance(t, StepTrace):
        return BandwidthTrace.steps(t.segments)
    if isinstance(t, ConstantTrace):
        return BandwidthTrace.constant(t.bps, t.seconds)
    try:
        return load_trace(t)
    except FileNotFoundError:
        raise UsageError(f"trace file not found: {t}") from None


# ---------------------------------------------------------------- staged output


class Staging:
    """Scratch directory whose files are moved into ``out`` on success only."""

    def __init__(self, out: Path):
        self.out = Path(out)
        self.out.parent.mkdir(parents=True, exist_ok=True)
        self.dir = Path(tempfile.mkdtemp(prefix=f".{self.out.name}.", dir=self.out.parent))
        self.files: list = []

    def write(self, name: str, text: str) -> Path:
        p = self.dir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
        self.files.append(name)
        return p

    def path(self, name: str) -> Path:
        p = self.dir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(name)
        return p

    def commit(self) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        for name in self.files:
            dst = self.out / name
            dst.parent.mkdir(parents=True, exist_ok=True)
            os.replace(self.dir / name, dst)
        shutil.rmtree(self.dir, ignore_errors=True)

    def discard(self) -> None:
        shutil.rmtree(self.dir, ignore_errors=True)


def _csv(rows: list, header: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------- subcommands


def cmd_simulate(args) -> int:
    cfg = _load_config(SimulateConfig, args.config)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.scheme:
        over["schemes"] = args.scheme
    if over:
        cfg = SimulateConfig.model_validate({**cfg.model_dump(), **over})
    frames, file_fps = _frames(cfg.video)
    fps = file_fps or cfg.fps
    trace = _trace(cfg.trace)
    stage = Staging(args.out)
    try:
        results = experiments.compare(
            cfg.schemes, frames, trace, cfg.controller, fps,
            dict(cfg.net.model_dump(), mtu=cfg.mtu), cfg.seed,
        )
        rows = []
        for name, res in results.items():
            stage.write(f"{name}/frames.csv", res.timeline.frames_csv())
            stage.write(f"{name}/report.json", res.report.to_json())
            rows.append(res.report.csv_row())
            if not res.conservation:
                raise RuntimeError(f"{name}: packet conservation violated")
            log.info("%s: non-rendered %.3f, mean PSNR %.2f dB", name, res.report.non_rendered_frac,
                     res.report.mean_psnr)
        stage.write("summary.csv", _csv(rows, QualityReport.CSV_HEADER))
        stage.write("targets.csv", _csv([[i, f"{b:.0f}"] for i, b in enumerate(results[cfg.schemes[0]].targets)],
                                        ["frame_id", "target_bps"]))
        if args.plot:
            from . import plotting

            plotting.plot_sessions(results, trace, stage.path("sessions.png"))
        stage.write("manifest.json", json.dumps(_manifest("simulate", cfg, stage.files + ["manifest.json"]),
                                                indent=2, sort_keys=True) + "\n")
        stage.commit()
    except BaseException:
        stage.discard()
        raise
    for r in rows:
        print(",".join(str(x) for x in r))
    return 0


def cmd_loss_sweep(args) -> int:
    cfg = _load_config(LossSweepConfig, args.config)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.scheme:
        over["schemes"] = args.scheme
    if over:
        cfg = LossSweepConfig.model_validate({**cfg.model_dump(), **over})
    frames, file_fps = _frames(cfg.video)
    stage = Staging(args.out)
    try:
        res = experiments.loss_sweep(
            frames, cfg.rates, cfg.seeds, cfg.budget_bps, file_fps or cfg.fps, cfg.schemes,
            cfg.fec_redundancy, cfg.seed, ipatch_k=cfg.ipatch_k,
        )
        rows = res.rows()
        header = ["scheme", "loss_rate", "mean_psnr", "ci95", "decodable_frac", "total_bytes"]
        text = _csv([[r[h] for h in header] for r in rows], header)
        stage.write("loss_sweep.csv", text)
        summary = {
            "lossless_psnr": res.lossless,
            "total_bytes": res.total_bytes,
            "rs_recoveries_verified": res.rs_verified,
        }
        if "grace" in res.curves:
            summary["grace_monotone_within_ci"] = experiments.monotone_within_ci(res.curves["grace"])
        stage.write("summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
        if args.plot:
            from . import plotting

            plotting.plot_loss_sweep(res, stage.path("loss_sweep.png"))
        stage.write("manifest.json", json.dumps(_manifest("loss-sweep", cfg, stage.files + ["manifest.json"]),
                                                indent=2, sort_keys=True) + "\n")
        stage.commit()
    except BaseException:
        stage.discard()
        raise
    sys.stdout.write(text)
    return 0


def cmd_grad_check(args) -> int:
    cfg = _load_config(GradCheckConfig, args.config)
    if args.seed is not None:
        cfg = GradCheckConfig.model_validate({**cfg.model_dump(), "seed": args.seed})
    rep = grad_check(cfg.k, cfg.d, cfg.rate, cfg.n, cfg.seed, cfg.tolerance)
    text = json.dumps(rep.as_dict(), indent=2, sort_keys=True) + "\n"
    if args.out:
        stage = Staging(args.out)
        try:
            stage.write("grad_check.json", text)
            stage.write("manifest.json", json.dumps(_manifest("grad-check", cfg, stage.files + ["manifest.json"]),
                                                    indent=2, sort_keys=True) + "\n")
            stage.commit()
        except BaseException:
            stage.discard()
            raise
    sys.stdout.write(text)
    print("PASS" if rep.passed else "FAIL")
    return 0 if rep.passed else 1


def cmd_codec_bench(args) -> int:
    cfg = _load_config(CodecBenchConfig, args.config)
    frames, _ = _frames(cfg.video)
    bench = experiments.codec_bench(frames)
    table = _csv([[r["rung"], r["step"], r["bytes"], r["packets"], f"{r['psnr_db']:.3f}"] for r in bench["rungs"]],
                  ["rung", "step", "bytes", "packets", "psnr_db"])
    if args.out:
        stage = Staging(args.out)
        try:
            stage.write("rungs.csv", table)
            # throughput figures are wall-clock measurements, so they stay out of the CSV
            stage.write("throughput.json", json.dumps({k: v for k, v in bench.items() if k != "rungs"},
                                                      indent=2, sort_keys=True) + "\n")
            if args.plot:
                from . import plotting

                plotting.plot_ladder(bench, stage.path("ladder.png"))
            stage.write("manifest.json", json.dumps(_manifest("codec-bench", cfg, stage.files + ["manifest.json"]),
                                                    indent=2, sort_keys=True) + "\n")
            stage.commit()
        except BaseException:
            stage.discard()
            raise
    print(f"{bench['width']}x{bench['height']}, {bench['frames']} P-frames: "
          f"encode {bench['encode_fps']:.1f} fps, decode {bench['decode_fps']:.1f} fps, "
          f"fast re-decode {bench['redecode_ms_per_frame']:.2f} ms/frame")
    sys.stdout.write(table)
    return 0


def _parse_segments(text: str) -> list:
    segs = []
    for part in text.split(","):
        try:
            secs, bps = part.split(":")
            segs.append((float(secs), float(bps)))
        except ValueError:
            raise UsageError(f"bad segment {part!r}; expected seconds:bps") from None
    return segs


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_trace_tools(args) -> int:
    if args.action == "validate":
        try:
            trace = parse_trace(Path(args.input).read_text())
        except FileNotFoundError:
            raise UsageError(f"trace file not found: {args.input}") from None
        r = trace.rates
        print(f"OK: {r.size} samples over {trace.duration:.1f} s, "
              f"min {r.min() / 1e6:.3f} Mbps, max {r.max() / 1e6:.3f} Mbps, mean {r.mean() / 1e6:.3f} Mbps")
        return 0
    if args.action == "resample":
        _emit(dump_trace(load_trace(args.input)), args.out)
        return 0
    if args.action == "convert":
        with open(args.input) as fh:
            _emit(dump_trace(mahimahi_to_trace(fh, args.mtu)), args.out)
        return 0
    segs = _parse_segments(args.segments)
    try:
        trace = BandwidthTrace.steps(segs)
    except (TraceError, ValueError) as e:
        raise UsageError(str(e)) from None
    _emit(dump_trace(trace), args.out)
    return 0


def cmd_pad_video(args) -> int:
    data = Path(args.input).read_bytes()
    Path(args.output).write_bytes(pad_y4m_bytes(data, args.multiple))
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rtvlab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"rtvlab {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="JSON config file; unknown keys are rejected")
        p.add_argument("--seed", type=int, help="override the config's root seed")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--plot", action="store_true", help="also write figures (needs matplotlib)")

    p = sub.add_parser("simulate", help="run schemes over the network simulator")
    common(p)
    p.add_argument("--scheme", action="append", choices=SCHEMES,
                   help="scheme to run (repeatable); the first one drives the rate controller")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("loss-sweep", help="quality against packet loss rate at matched bytes")
    common(p)
    p.add_argument("--scheme", action="append", choices=experiments.SWEEP_SCHEMES)
    p.set_defaults(func=cmd_loss_sweep)

    p = sub.add_parser("grad-check", help="check the masked-loss gradient estimator on a toy codec")
    common(p, out_required=False)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("codec-bench", help="codec throughput and ladder table")
    common(p, out_required=False)
    p.set_defaults(func=cmd_codec_bench)

    p = sub.add_parser("trace-tools", help="validate, resample, convert or synthesize bandwidth traces")
    tsub = p.add_subparsers(dest="action", required=True)
    t = tsub.add_parser("validate", help="check a bandwidth CSV and print a summary")
    t.add_argument("input")
    t = tsub.add_parser("resample", help="rewrite a bandwidth CSV on the 0.1 s grid")
    t.add_argument("input")
    t.add_argument("--out")
    t = tsub.add_parser("convert", help="Mahimahi delivery trace to bandwidth CSV")
    t.add_argument("input")
    t.add_argument("--mtu", type=int, default=1500)
    t.add_argument("--out")
    t = tsub.add_parser("step", help="piecewise-constant trace")
    t.add_argument("--segments", default="5:8e6,5:2e6,5:8e6", help="comma list of seconds:bps")
    t.add_argument("--out")
    p.set_defaults(func=cmd_trace_tools)

    p = sub.add_parser("pad-video", help="pad a Y4M file to macroblock-aligned dimensions")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--multiple", type=int, default=16)
    p.set_defaults(func=cmd_pad_video)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as e:
        print(f"rtvlab: invalid configuration:\n{e}", file=sys.stderr)
        return 2
    except (UsageError, TraceError, Y4MError) as e:
        print(f"rtvlab: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"rtvlab: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - report, then signal a runtime failure
        log.debug("run failed", exc_info=True)
        print(f"rtvlab: run failed: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
