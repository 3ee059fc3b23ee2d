"""Figure rendering for the report paths (codebook levels, cost bars,
training curves).  All figures are written to files; no interactive UI."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .codebook import gen_codebook
from .cost import CostReport


def plot_codebook_levels(b: int, n: int, path: str) -> None:
    """Level-placement comparison across modes, normalized to [0, 1]."""
    modes = ["uniform", "one-hot", "additive", "nhot"]
    fig, ax = plt.subplots(figsize=(8, 3.2))
    top = (1 << b) - 1
    for row, mode in enumerate(modes):
        mags = np.asarray(gen_codebook(b, n, mode).magnitudes, dtype=float) / top
        ax.scatter(mags, np.full_like(mags, row), marker="|", s=220)
        ax.annotate(f"{mags.size} levels", (1.005, row), fontsize=8, va="center")
    ax.set_yticks(range(len(modes)), modes)
    ax.set_xlabel("normalized magnitude")
    ax.set_title(f"quantization levels, b={b}, n={n}")
    ax.set_xlim(-0.02, 1.12)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_cost_report(report: CostReport, path: str) -> None:
    """Per-layer bitOPs and storage bars plus the totals-vs-baseline ratios."""
    names = [d["name"] for d in report.layers]
    ops = [d["bitops"] for d in report.layers]
    bits = [d["storage_bits"] for d in report.layers]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 3.6))
    xs = np.arange(len(names))
    ax1.bar(xs, ops)
    ax1.set_xticks(xs, names, rotation=45, ha="right", fontsize=8)
    ax1.set_ylabel("bitOPs")
    ratio = report.totals.get("bitops_ratio")
    ax1.set_title(f"bitOPs (ratio vs {report.totals['baseline']}: {ratio:.3f})")
    ax2.bar(xs, bits, color="tab:orange")
    ax2.set_xticks(xs, names, rotation=45, ha="right", fontsize=8)
    ax2.set_ylabel("storage bits")
    ratio = report.totals.get("storage_ratio")
    ax2.set_title(f"storage (ratio: {ratio:.3f})")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_training_log(log: list[dict], path: str) -> None:
    """Loss, accuracy, and learning-rate curves with the stage boundary marked."""
    epochs = [r["epoch"] for r in log]
    fig, axes = plt.subplots(3, 1, figsize=(7, 7), sharex=True)
    axes[0].plot(epochs, [r["train_loss"] for r in log])
    axes[0].set_ylabel("train loss")
    axes[1].plot(epochs, [r["test_accuracy"] for r in log], color="tab:green")
    axes[1].set_ylabel("test accuracy")
    axes[2].plot(epochs, [r["lr"] for r in log], color="tab:red")
    axes[2].set_ylabel("learning rate")
    axes[2].set_xlabel("epoch")
    boundary = next((r["epoch"] for r in log if r["stage"] == 2), None)
    if boundary is not None and boundary > 1:
        for ax in axes:
            ax.axvline(boundary - 0.5, color="gray", linestyle="--", linewidth=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
