"""Figures written next to the CSV/JSONL reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}

COLORS = {"vanilla": "#c0392b", "anchor-fast": "#2471a3", "anchor-explicit": "#7d3c98"}


def _series(records):
    out = {}
    for r in records:
        out.setdefault((r.mechanism, r.m, r.d, r.heads), []).append(r)
    return {k: sorted(v, key=lambda r: r.n) for k, v in sorted(out.items())}


def plot_scaling(records, fits, path, title=None):
    """Log-log wall time against n, one line per series, with fitted slopes in the legend."""
    fit_by_key = {f.mechanism: f for f in fits}
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        for (mech, m, d, heads), recs in _series(records).items():
            ns = np.array([r.n for r in recs])
            ms = np.array([r.wall_ns_median for r in recs]) / 1e6
            label = mech if mech == "vanilla" else f"{mech} (m={m})"
            fit = fit_by_key.get(mech)
            if fit is not None:
                label += f", slope {fit.slope:.2f}"
            ax.loglog(ns, ms, "o-", color=COLORS.get(mech.split("@")[0]), label=label, lw=1.2, ms=3)
        ax.set_xlabel("tokens n")
        ax.set_ylabel("median wall time [ms]")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        ax.grid(True, which="major", alpha=0.2)
        fig.savefig(path)
        plt.close(fig)


def plot_flops(records, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        for (mech, m, d, heads), recs in _series(records).items():
            ax.loglog([r.n for r in recs], [r.flops for r in recs], "s--", color=COLORS.get(mech.split("@")[0]),
                      label=mech, lw=1, ms=3)
        ax.set_xlabel("tokens n")
        ax.set_ylabel("flops")
        ax.legend(frameon=False)
        fig.savefig(path)
        plt.close(fig)


def plot_training(epoch_losses, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 2.8))
        epochs = np.arange(1, len(epoch_losses) + 1)
        ax.semilogy(epochs, epoch_losses, "o-", color=COLORS["anchor-fast"], lw=1.2, ms=3)
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean cross-entropy")
        fig.savefig(path)
        plt.close(fig)


def plot_objective(trace, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 2.8))
        ax.plot(np.arange(len(trace)), trace, "o-", color=COLORS["anchor-fast"], lw=1.2, ms=3)
        ax.set_xlabel("iteration")
        ax.set_ylabel("surrogate objective")
        fig.savefig(path)
        plt.close(fig)
