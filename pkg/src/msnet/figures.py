"""Report figures rendered next to the delimited outputs.

Every function takes already-computed data and a destination path and
writes a single PNG; nothing here recomputes pipeline results.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(Path(path), dpi=120)
    plt.close(fig)


def save_loss_curves(metrics, path) -> None:
    """Total / contrastive / consistency losses and LR per epoch."""
    epochs = [m.epoch for m in metrics]
    fig, (ax, ax_lr) = plt.subplots(
        2, 1, figsize=(7, 6), sharex=True, gridspec_kw={"height_ratios": [3, 1]}
    )
    ax.plot(epochs, [m.mean_loss for m in metrics], label="total", lw=2)
    ax.plot(epochs, [m.info_nce for m in metrics], label="contrastive", ls="--")
    ax.plot(epochs, [m.d_ec for m in metrics], label="consistency", ls=":")
    ax.set_ylabel("loss")
    ax.legend()
    ax.grid(alpha=0.3)
    ax_lr.plot(epochs, [m.lr for m in metrics], color="tab:red")
    ax_lr.set_xlabel("epoch")
    ax_lr.set_ylabel("lr")
    ax_lr.grid(alpha=0.3)
    _finish(fig, path)


def save_accuracy_vs_fraction(fractions, accuracies, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot([f * 100 for f in fractions], [a * 100 for a in accuracies], marker="o")
    ax.set_xlabel("labeled fraction (%)")
    ax.set_ylabel("probe accuracy (%)")
    ax.set_ylim(0, 100)
    ax.grid(alpha=0.3)
    _finish(fig, path)


def save_confusion_heatmap(confusion: np.ndarray, classes, path) -> None:
    confusion = np.asarray(confusion)
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    im = ax.imshow(confusion, cmap="Blues")
    ax.set_xticks(range(len(classes)), classes, rotation=45, ha="right")
    ax.set_yticks(range(len(classes)), classes)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    for i in range(confusion.shape[0]):
        for j in range(confusion.shape[1]):
            ax.text(j, i, str(int(confusion[i, j])), ha="center", va="center",
                    color="white" if confusion[i, j] > confusion.max() / 2 else "black")
    fig.colorbar(im, ax=ax, shrink=0.8)
    _finish(fig, path)


def save_fusion_ratios(rows, path) -> None:
    """rows: (layer_name, abs_alpha, abs_beta, log_ratio) tuples."""
    names = [r[0] for r in rows]
    logr = [r[3] for r in rows]
    finite = [v if np.isfinite(v) else np.sign(v) * 3.0 for v in logr]
    fig, ax = plt.subplots(figsize=(7, 0.5 * len(rows) + 2))
    ax.barh(range(len(rows)), finite, color="tab:purple")
    ax.set_yticks(range(len(rows)), names)
    ax.axvline(0.0, color="k", lw=1)
    ax.set_xlabel("log10(|attention gain| / |convolution gain|)")
    ax.invert_yaxis()
    ax.grid(alpha=0.3, axis="x")
    _finish(fig, path)


def save_size_scatter(truth: np.ndarray, estimated: np.ndarray, path) -> None:
    """truth/estimated: (n, 2) arrays of (length, width) in meters."""
    truth = np.asarray(truth)
    estimated = np.asarray(estimated)
    fig, axes = plt.subplots(1, 2, figsize=(9, 4.2))
    for ax, col, name in ((axes[0], 0, "length"), (axes[1], 1, "width")):
        t, e = truth[:, col], estimated[:, col]
        ax.scatter(t, e, s=14, alpha=0.6)
        lim = (0.0, max(t.max(), e.max()) * 1.1)
        ax.plot(lim, lim, "k--", lw=1)
        ax.plot(lim, [v * 1.1 for v in lim], "r:", lw=1)
        ax.plot(lim, [v * 0.9 for v in lim], "r:", lw=1)
        ax.set_xlim(lim)
        ax.set_ylim(lim)
        ax.set_xlabel(f"true {name} (m)")
        ax.set_ylabel(f"estimated {name} (m)")
        ax.grid(alpha=0.3)
    _finish(fig, path)


def save_embedding_scatter(embeddings: np.ndarray, labels, classes, path) -> None:
    """First two principal components, one color per class."""
    x = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    centered = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    coords = centered @ vt[:2].T
    fig, ax = plt.subplots(figsize=(6, 5))
    for i, cls in enumerate(classes):
        pts = coords[labels == i]
        ax.scatter(pts[:, 0], pts[:, 1], s=12, alpha=0.7, label=cls)
    ax.set_xlabel("component 1")
    ax.set_ylabel("component 2")
    ax.legend()
    ax.grid(alpha=0.3)
    _finish(fig, path)
