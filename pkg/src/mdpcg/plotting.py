"""Static SVG figures for solve and rollout outputs."""
from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

golden_mean = (math.sqrt(5) - 1.0) / 2.0
fig_width = 5.0

params = {
    "axes.labelsize": 10,
    "font.size": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": [fig_width, fig_width * golden_mean],
    "lines.linewidth": 1.2,
    "svg.hashsalt": "mdpcg",  # stable element ids across runs
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_convergence(rows, path):
    """Per-player ``||x^{ik}||_2`` and iterate movement against iteration ``k``."""
    k = [int(r["k"]) for r in rows]
    players = sorted(c.split("_")[1] for c in rows[0] if c.startswith("movement_"))
    with matplotlib.rc_context(params):
        fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(fig_width, fig_width * 0.9))
        for p in players:
            if f"norm_{p}" in rows[0]:
                ax1.plot(k, [float(r[f"norm_{p}"]) for r in rows], label=f"player {p}")
            ax2.semilogy(k, [float(r[f"movement_{p}"]) for r in rows], label=f"player {p}")
        ax1.set_ylabel(r"$\|x^{i}\|_2$")
        ax2.set_ylabel("movement")
        ax2.set_xlabel("iteration $k$")
        ax1.legend()
        _save(fig, path)


def plot_collisions(rows, path):
    t = [int(r["t"]) for r in rows]
    players = [c for c in rows[0] if c.startswith("player")]
    with matplotlib.rc_context(params):
        fig, ax = plt.subplots()
        for p in players:
            ax.plot(t, [float(r[p]) for r in rows], label=p.replace("player", "player "))
        ax.set_xlabel("time step $t$")
        ax.set_ylabel("mean collisions")
        ax.legend()
        _save(fig, path)


def plot_wait_times(rows, path):
    labels = [f"player {r['player']}" for r in rows]
    groups = [("mean_wait", "mean wait"), ("worst_wait", "worst wait"), ("mean_collisions", "collisions in $T$")]
    width = 0.8 / len(groups)
    with matplotlib.rc_context(params):
        fig, ax = plt.subplots()
        for j, (key, name) in enumerate(groups):
            xs = [n + (j - 1) * width for n in range(len(rows))]
            ax.bar(xs, [float(r[key]) for r in rows], width=width, label=name)
        ax.set_xticks(range(len(rows)))
        ax.set_xticklabels(labels)
        ax.legend()
        _save(fig, path)
