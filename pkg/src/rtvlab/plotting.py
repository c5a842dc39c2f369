"""Figures for experiment outputs. Imported only when ``--plot`` is given."""

import math

import matplotlib as mpl

mpl.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}

COLORS = {"grace": "#c0392b", "fec": "#2471a3", "skip": "#7f8c8d", "svc": "#229954"}


def figsize(scale=1.0, ratio=None):
    width = 6.0 * scale
    ratio = (math.sqrt(5) - 1) / 2 if ratio is None else ratio
    return width, width * ratio


def plot_loss_sweep(result, path):
    """Quality against loss rate; undecodable points are drawn as crosses on the floor."""
    with mpl.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize(0.8))
        floor = min((p.mean for pts in result.curves.values() for p in pts if p.mean is not None), default=0) - 2
        for row, (scheme, pts) in enumerate(result.curves.items()):
            xs = [100 * p.rate for p in pts if p.mean is not None]
            ys = [p.mean for p in pts if p.mean is not None]
            err = [p.ci95 for p in pts if p.mean is not None]
            c = COLORS.get(scheme)
            ax.errorbar(xs, ys, yerr=err, marker="o", ms=3, capsize=2, color=c, label=scheme)
            dead = [100 * p.rate for p in pts if p.mean is None]
            if dead:
                ax.plot(dead, [floor - 0.8 * row] * len(dead), "x", color=c)
        ax.set_xlabel("packet loss rate (%)")
        ax.set_ylabel("PSNR (dB)")
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_sessions(results, trace, path):
    """Per-frame PSNR, delay and the bandwidth trace for each simulated scheme."""
    with mpl.rc_context(STYLE):
        fig, axes = plt.subplots(3, 1, sharex=True, figsize=figsize(1.0, 0.9))
        axes[0].step(trace.times, trace.rates / 1e6, where="post", color="k", lw=1, label="link")
        for name, res in results.items():
            c = COLORS.get(name)
            t = [r.encode_time / 1000 for r in res.timeline.frames]
            axes[0].plot(t, [b / 1e6 for b in res.targets], color=c, lw=0.8, label=f"{name} target")
            q = [(r.encode_time / 1000, r.psnr) for r in res.timeline.frames if r.rendered and r.psnr is not None]
            if q:
                axes[1].plot(*zip(*q), ".", ms=2, color=c, label=name)
            d = [(r.encode_time / 1000, r.delay) for r in res.timeline.frames if r.delay is not None]
            if d:
                axes[2].plot(*zip(*d), lw=0.8, color=c, label=name)
        axes[0].set_ylabel("Mbps")
        axes[1].set_ylabel("PSNR (dB)")
        axes[2].set_ylabel("delay (ms)")
        axes[2].axhline(400, color="0.6", lw=0.6, ls="--")
        axes[2].set_xlabel("time (s)")
        for ax in axes:
            ax.legend(frameon=False, ncol=4)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_ladder(bench, path):
    with mpl.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize(0.7))
        rows = bench["rungs"]
        ax.plot([r["bytes"] / 1000 for r in rows], [r["psnr_db"] for r in rows], "o-", ms=3, color="k")
        for r in rows:
            ax.annotate(str(r["rung"]), (r["bytes"] / 1000, r["psnr_db"]), fontsize=7,
                        xytext=(3, -8), textcoords="offset points")
        ax.set_xlabel("frame size (kB)")
        ax.set_ylabel("PSNR (dB)")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
