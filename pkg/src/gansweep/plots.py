"""Optional matplotlib figures: training curves, GAN losses, confusion matrix.

Every function returns the written path, or ``None`` when matplotlib is
not installed. Nothing else in the package depends on these figures.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

log = logging.getLogger(__name__)


def _pyplot():
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib is not installed; skipping figures")
        return None
    return plt


def _save(fig, plt, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    # fixed metadata keeps repeated runs byte-identical
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_history(history, path) -> Optional[Path]:
    """Train/validation accuracy and loss per epoch, side by side."""
    plt = _pyplot()
    if plt is None:
        return None
    epochs = range(1, len(history) + 1)
    fig, (acc_ax, loss_ax) = plt.subplots(1, 2, figsize=(9, 3.5))
    acc_ax.plot(epochs, history.train_acc, marker="o", label="train")
    acc_ax.plot(epochs, history.val_acc, marker="o", label="validation")
    acc_ax.set(xlabel="epoch", ylabel="accuracy", title="Accuracy")
    loss_ax.plot(epochs, history.train_loss, marker="o", label="train")
    loss_ax.plot(epochs, history.val_loss, marker="o", label="validation")
    loss_ax.set(xlabel="epoch", ylabel="BCE loss", title="Loss")
    for ax in (acc_ax, loss_ax):
        ax.legend()
        ax.grid(alpha=0.3)
    return _save(fig, plt, path)


def plot_gan_losses(report, path) -> Optional[Path]:
    plt = _pyplot()
    if plt is None:
        return None
    fig, ax = plt.subplots(figsize=(6, 3.5))
    epochs = range(1, len(report.gen_loss) + 1)
    ax.plot(epochs, report.gen_loss, label="generator")
    ax.plot(epochs, report.disc_loss, label="discriminator")
    ax.set(xlabel="epoch", ylabel="loss", title=f"GAN losses ({report.label})")
    ax.legend()
    ax.grid(alpha=0.3)
    return _save(fig, plt, path)


def plot_confusion(counts, path, title: str = "Confusion matrix") -> Optional[Path]:
    plt = _pyplot()
    if plt is None:
        return None
    matrix = counts.as_matrix()
    fig, ax = plt.subplots(figsize=(4, 3.6))
    ax.imshow(matrix, cmap="Blues")
    names = ["tumor", "healthy"]
    ax.set_xticks([0, 1], names)
    ax.set_yticks([0, 1], names)
    ax.set(xlabel="predicted", ylabel="true", title=title)
    for i in range(2):
        for j in range(2):
            colour = "white" if matrix[i, j] > matrix.max() / 2 else "black"
            ax.text(j, i, str(matrix[i, j]), ha="center", va="center", color=colour)
    return _save(fig, plt, path)
