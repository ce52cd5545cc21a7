"""Regret-curve figures written next to the CSV output."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "cbl",
}


def plot_regret(panels, path, fmt=None):
    """Draw one panel per environment, one line per policy, with +-1 SE bands.

    ``panels`` maps a panel title to a list of ``(label, t, mean, se)``.
    """
    n = len(panels)
    cols = min(n, 2)
    rows = math.ceil(n / cols)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(rows, cols, figsize=(4.2 * cols, 3.0 * rows), squeeze=False)
        for ax, (title, lines) in zip(axes.flat, panels.items()):
            for label, t, mean, se in lines:
                (ln,) = ax.plot(t, mean, lw=1.2, label=label)
                ax.fill_between(t, mean - se, mean + se, color=ln.get_color(), alpha=0.2, lw=0)
            ax.set_title(title)
            ax.set_xlabel("round")
            ax.set_ylabel("cumulative regret")
            ax.legend(frameon=False)
        for ax in list(axes.flat)[n:]:
            ax.set_visible(False)
        fig.tight_layout()
        fig.savefig(path, format=fmt, metadata={"Date": None} if (fmt or str(path)).endswith("svg") else None)
        plt.close(fig)
    return path
