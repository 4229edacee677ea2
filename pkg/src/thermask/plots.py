"""Static report figures (PNG, non-interactive backend)."""

from __future__ import annotations

import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from thermask.evalkit.classification import CLASSES  # noqa: E402

# no Software/date chunks, so reruns write identical bytes
_PNG_METADATA = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp-{os.getpid()}")
    try:
        fig.savefig(tmp, format="png", dpi=100, metadata=_PNG_METADATA)
        os.replace(tmp, path)
    finally:
        plt.close(fig)
        if tmp.exists():
            tmp.unlink()
    return path


def plot_loss_curves(runlog, path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = np.arange(0, runlog.epochs_completed + 1)
    ax.plot(epochs, [runlog.initial_train_loss, *runlog.train_loss], label="train")
    val = np.array([runlog.initial_val_loss, *runlog.val_loss], dtype=float)
    if np.isfinite(val).any():
        ax.plot(epochs, val, label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def plot_confusion(report, path, title: str = "") -> Path:
    names = [c.name for c in CLASSES]
    matrix = np.asarray(report.confusion)
    fig, ax = plt.subplots(figsize=(4.5, 4))
    ax.imshow(matrix, cmap="Blues")
    for i in range(matrix.shape[0]):
        for j in range(matrix.shape[1]):
            color = "white" if matrix[i, j] > matrix.max() / 2 else "black"
            ax.text(j, i, str(matrix[i, j]), ha="center", va="center", color=color)
    ax.set_xticks(range(len(names)), names)
    ax.set_yticks(range(len(names)), names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_pr_curve(report, path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(report.curve_recall, report.curve_precision, drawstyle="steps-post")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_title(title or f"AP50 = {report.map50:.3f}")
    fig.tight_layout()
    return _save(fig, path)
