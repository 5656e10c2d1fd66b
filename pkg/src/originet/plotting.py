"""Figures written next to the CSV/JSON reports."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# one colour/line style per activation kind
STYLES = {
    "sigmoid": dict(color="tab:blue", ls="-."),
    "tanh": dict(color="tab:orange", ls=":", marker="o", markevery=25, ms=3),
    "relu": dict(color="tab:brown", ls="--"),
    "elu": dict(color="tab:green", ls="--", marker="o", markevery=25, ms=3),
    "leaky_relu": dict(color="tab:purple", ls="--", marker="+", markevery=25),
    "rrelu": dict(color="darkred", ls="-", lw=2),
}


def _figure(width: float = 7.0, height: float | None = None, ncols: int = 1):
    golden = (5**0.5 - 1) / 2
    fig, axes = plt.subplots(1, ncols, figsize=(width, height or width * golden), facecolor="w")
    return fig, axes


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    # fixed metadata keeps the PNG bytes reproducible
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_activation_curves(curves: dict[str, np.ndarray], path: str | Path) -> Path:
    """Forward values and derivatives of each activation, side by side."""
    fig, (ax_f, ax_d) = _figure(11, 4.2, ncols=2)
    for name, rows in curves.items():
        style = STYLES.get(name.split(":")[0], {})
        ax_f.plot(rows[:, 0], rows[:, 1], label=name, **style)
        ax_d.plot(rows[:, 0], rows[:, 2], label=name, **style)
    ax_f.set_title("forward")
    ax_d.set_title("derivative")
    for ax in (ax_f, ax_d):
        ax.axhline(0, color="0.7", lw=0.6)
        ax.axvline(0, color="0.7", lw=0.6)
        ax.set_xlabel("x")
    ax_f.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def plot_training_log(records: list[dict], path: str | Path) -> Path:
    fig, (ax_l, ax_a) = _figure(10, 3.8, ncols=2)
    epochs = [r["epoch"] for r in records]
    ax_l.plot(epochs, [r["train_loss"] for r in records], "k-", label="train loss")
    if records and "val_loss" in records[0]:
        ax_l.plot(epochs, [r["val_loss"] for r in records], "k--", label="val loss")
    ax_a.plot(epochs, [r["train_acc"] for r in records], "b-", label="train acc")
    ax_a.plot(epochs, [r["val_acc"] for r in records], "r--", label="val acc")
    ax_a.set_ylim(-0.02, 1.02)
    for ax in (ax_l, ax_a):
        ax.set_xlabel("epoch")
        ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def plot_confusion(matrix, label_names: list[str], path: str | Path, title: str = "") -> Path:
    cm = np.asarray(matrix)
    fig, ax = _figure(4.8, 4.2)
    ax.imshow(cm, cmap="Blues")
    ax.set_xticks(range(len(label_names)), label_names, rotation=45, ha="right")
    ax.set_yticks(range(len(label_names)), label_names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    hi = cm.max() if cm.size else 0
    for i in range(cm.shape[0]):
        for j in range(cm.shape[1]):
            ax.text(j, i, str(cm[i, j]), ha="center", va="center", color="w" if cm[i, j] > hi / 2 else "k", fontsize=9)
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_fold_accuracy(folds: list[dict], mean_accuracy: float, path: str | Path) -> Path:
    fig, ax = _figure(7, 3.2)
    names = [f["test_subject"] for f in folds]
    ax.bar(range(len(folds)), [f["accuracy"] for f in folds], color="0.55")
    ax.axhline(mean_accuracy, color="darkred", ls="--", label=f"pooled {mean_accuracy:.3f}")
    ax.set_xticks(range(len(folds)), names, rotation=90 if len(folds) > 12 else 0)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("test accuracy")
    ax.set_xlabel("held-out subject")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)
