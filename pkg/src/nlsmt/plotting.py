"""Figures for training reports. Always renders off-screen to files."""
from __future__ import annotations

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
    "figure.dpi": 100,
}


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_training(reports, path, title=None):
    """Two panels: 1-best training BLEU and pair accuracy per iteration."""
    iters = [r.iteration for r in reports]
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7.0, 2.8))
        ax1.plot(iters, [r.train_bleu for r in reports], "o-", color="C0")
        ax1.set_xlabel("iteration")
        ax1.set_ylabel("train BLEU (1-best)")
        ax2.plot(iters, [r.pair_accuracy for r in reports], "s-", color="C1")
        ax2.set_xlabel("iteration")
        ax2.set_ylabel("pair accuracy")
        ax2.set_ylim(0, 1.02)
        if title:
            fig.suptitle(title)
        return _finish(fig, path)


def plot_runs(runs, path, ylabel="train BLEU (1-best)", key="train_bleu"):
    """Overlay one curve per named run; ``runs`` maps label -> report list."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        for label, reports in runs.items():
            ax.plot([r.iteration for r in reports], [getattr(r, key) for r in reports],
                    "o-", ms=3, label=label)
        ax.set_xlabel("iteration")
        ax.set_ylabel(ylabel)
        ax.legend(frameon=False)
        return _finish(fig, path)
