"""Matplotlib renderings of the delimited outputs, written next to them."""

from __future__ import annotations

import logging

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import CurveResult, SweepRow
from .training import TrainHistory

logger = logging.getLogger(__name__)

# Keep PNG bytes reproducible run to run.
_SAVE_KWARGS = {"dpi": 110, "metadata": {"Software": None}}


def _save(fig, path) -> None:
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
    logger.info("wrote figure %s", path)


def plot_history(history: TrainHistory, path, title: str = "training") -> None:
    epochs = np.arange(1, len(history.train_loss) + 1)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epochs, history.train_loss, label="train")
    ax.plot(epochs, history.valid_loss, label="validation")
    if history.best_epoch:
        ax.axvline(history.best_epoch, color="gray", ls="--", lw=1,
                   label=f"best epoch {history.best_epoch}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def plot_curve(result: CurveResult, path) -> None:
    """Balanced accuracy against the per-class label budget, one line per method."""
    methods = list(dict.fromkeys(row[0] for row in result.rows))
    budgets = list(dict.fromkeys(row[1] for row in result.rows))
    positions = {b: i for i, b in enumerate(budgets)}
    fig, ax = plt.subplots(figsize=(7, 4))
    for method in methods:
        xs, means, spreads = [], [], []
        for budget in budgets:
            accs = [row[3] for row in result.rows if row[0] == method and row[1] == budget]
            if not accs:
                continue
            xs.append(positions[budget])
            means.append(float(np.mean(accs)))
            spreads.append(float(np.std(accs)))
        ax.errorbar(xs, means, yerr=spreads, marker="o", capsize=3, label=method)
    ax.set_xticks(range(len(budgets)))
    ax.set_xticklabels(budgets)
    ax.set_xlabel("labeled examples per class")
    ax.set_ylabel("test balanced accuracy")
    ax.set_ylim(0, 1)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def plot_sweep(rows: list[SweepRow], path) -> None:
    labels = [f"{r.tau_pos_s:g}/{r.tau_neg_s:g}" for r in rows]
    x = np.arange(len(rows))
    width = 0.38
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(x - width / 2, [r.bal_acc_ssl for r in rows], width, label="pretext")
    ax.bar(x + width / 2, [r.bal_acc_staging for r in rows], width, label="staging probe")
    ax.set_xticks(x)
    ax.set_xticklabels(labels)
    ax.set_xlabel("positive/negative context (s)")
    ax.set_ylabel("test balanced accuracy")
    ax.set_ylim(0, 1)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def plot_confusion(matrix: np.ndarray, class_names: list[str], path) -> None:
    fig, ax = plt.subplots(figsize=(5, 4.5))
    image = ax.imshow(matrix, cmap="Blues")
    for i in range(matrix.shape[0]):
        for j in range(matrix.shape[1]):
            ax.text(j, i, f"{matrix[i, j]:g}", ha="center", va="center", fontsize=9)
    ax.set_xticks(range(len(class_names)))
    ax.set_xticklabels(class_names)
    ax.set_yticks(range(len(class_names)))
    ax.set_yticklabels(class_names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("actual")
    fig.colorbar(image, ax=ax, fraction=0.046)
    fig.tight_layout()
    _save(fig, path)
