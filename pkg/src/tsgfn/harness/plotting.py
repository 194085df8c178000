"""Figures for the report paths. Everything renders to files through the Agg backend."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}


def _size(width=5.0):
    golden = (np.sqrt(5.0) - 1.0) / 2.0
    return width, width * golden


def plot_curves(curves: dict, path, ylabel: str, xlabel: str = "trajectories seen") -> Path:
    """``curves`` maps a group name to ``(x, mean, stderr)`` arrays; draws mean with a stderr band."""
    path = Path(path)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=_size())
        for name, (x, mean, err) in curves.items():
            line, = ax.plot(x, mean, label=name, lw=1.4)
            ax.fill_between(x, mean - err, mean + err, color=line.get_color(), alpha=0.2, lw=0)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_grid_distributions(env, target, learned, path) -> Path:
    """Target next to learned terminal distribution as two heatmaps on the H x H grid."""
    path = Path(path)
    H = env.H
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, 2, figsize=(7.0, 3.2))
        vmax = max(target.probs.max(), learned.probs.max())
        for ax, table, title in zip(axes, (target, learned), ("target", "sampler")):
            im = ax.imshow(table.probs.reshape(H, H).T, origin="lower", cmap="viridis", vmin=0, vmax=vmax)
            ax.set_title(title)
            ax.set_xlabel("x1")
            ax.set_ylabel("x2")
        fig.colorbar(im, ax=axes, shrink=0.8)
        fig.savefig(path)
        plt.close(fig)
    return path
