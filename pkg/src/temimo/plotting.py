"""Figure rendering for evaluation reports (headless, files only)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

plt.rcParams.update(
    {
        "figure.figsize": (6.0, 4.0),
        "figure.dpi": 120,
        "axes.grid": True,
        "grid.alpha": 0.3,
        "font.size": 9,
        "legend.fontsize": 8,
        "savefig.bbox": "tight",
    }
)

_MARKERS = ["o", "s", "^", "v", "d", "x", "*", "p"]


def sum_rate_figure(records, path):
    """Mean sum-rate vs SNR, one line per method."""
    methods = []
    for r in records:
        if r.method not in methods:
            methods.append(r.method)
    fig, ax = plt.subplots()
    for i, m in enumerate(methods):
        pts = sorted((r.snr_db, r.mean_rate) for r in records if r.method == m)
        ax.plot(
            [p[0] for p in pts],
            [p[1] for p in pts],
            marker=_MARKERS[i % len(_MARKERS)],
            label=m,
        )
    ax.set_xlabel("SNR (dB)")
    ax.set_ylabel("mean sum-rate (bits/s/Hz)")
    ax.legend()
    fig.savefig(path)
    plt.close(fig)


def ablation_figure(rows, path):
    """Per-pattern relative module cost (bars) and attained sum-rate (line)."""
    patterns = [r["pattern"] for r in rows]
    ratios = [100.0 * r["param_ratio"] for r in rows]
    rates = [r["mean_rate"] for r in rows]
    fig, ax = plt.subplots()
    bars = ax.bar(patterns, rates, color="tab:blue", alpha=0.75)
    for bar, ratio in zip(bars, ratios):
        ax.annotate(
            f"{ratio:.0f}%",
            (bar.get_x() + bar.get_width() / 2, bar.get_height()),
            ha="center",
            va="bottom",
        )
    ax.set_xlabel("subset pattern")
    ax.set_ylabel("mean sum-rate (bits/s/Hz)")
    ax.set_title("bars annotated with module cost relative to the full power set")
    fig.savefig(path)
    plt.close(fig)


def loss_figure(losses, path):
    fig, ax = plt.subplots()
    ax.plot(losses, linewidth=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    fig.savefig(path)
    plt.close(fig)
