"""Figures: reconstruction error maps, per-video score curves, ablation bars."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# lighter = larger error
ERROR_CMAP = "inferno"

STYLE = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}


def _to_image(frame):
    return np.clip(np.transpose(np.asarray(frame), (1, 2, 0)), 0.0, 1.0)


def save_error_map(path, target, prediction, emap, vmax=None, title=None):
    """Three panels: ground-truth frame, prediction, channel-summed squared error."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(6.0, 2.2))
        axes[0].imshow(_to_image(target), interpolation="nearest")
        axes[0].set_title("frame")
        axes[1].imshow(_to_image(prediction), interpolation="nearest")
        axes[1].set_title("prediction")
        im = axes[2].imshow(emap, cmap=ERROR_CMAP, vmin=0.0, vmax=vmax, interpolation="nearest")
        axes[2].set_title("squared error")
        fig.colorbar(im, ax=axes[2], fraction=0.046, pad=0.04)
        for ax in axes:
            ax.set_xticks([])
            ax.set_yticks([])
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def _spans(flags):
    """Contiguous runs of truthy entries as (start, stop) index pairs."""
    spans, start = [], None
    for i, f in enumerate(list(flags) + [0]):
        if f and start is None:
            start = i
        elif not f and start is not None:
            spans.append((start, i))
            start = None
    return spans


def save_score_curve(path, rows, title=None):
    """rows: (frame_index, score, label) for one video. Abnormal frames are shaded."""
    frames = np.array([r[0] for r in rows])
    scores = np.array([r[1] for r in rows])
    labels = [r[2] for r in rows]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 2.2))
        for a, b in _spans(labels):
            ax.axvspan(frames[a] - 0.5, frames[b - 1] + 0.5, color="tab:orange", alpha=0.3, lw=0)
        ax.plot(frames, scores, color="tab:blue", lw=1.2)
        ax.set_xlabel("frame")
        ax.set_ylabel("anomaly score")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def save_ablation_bars(path, table):
    """table: {setting: [auroc per seed]}; bars show the mean, dots the seeds."""
    names = list(table)
    means = [np.mean(table[n]) for n in names]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 2.6))
        x = np.arange(len(names))
        ax.bar(x, means, color="0.75")
        for i, n in enumerate(names):
            ax.scatter(np.full(len(table[n]), i), table[n], color="k", s=8, zorder=3)
        ax.set_xticks(x)
        ax.set_xticklabels(names, rotation=15)
        ax.set_ylabel("frame AUROC")
        lo = min(min(v) for v in table.values())
        ax.set_ylim(max(0.0, lo - 0.05), 1.0)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
