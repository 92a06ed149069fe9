"""Figure rendering for campaign logs and study tables.

Everything draws through the Agg backend and writes straight to files, so
reports come out the same on headless runners as on desktops.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .campaign import CampaignResult
from .studies import AblationTable, CropRecord, SequentialResult


def iou_curves(runs: dict[str, list[CampaignResult]], path: str | Path,
               title: str = "IoU vs annotation budget") -> Path:
    """One mean curve per arm over shared budgets, seed runs drawn faintly."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    for arm, results in runs.items():
        budgets = results[0].budgets
        curves = np.array([r.ious for r in results])
        color = ax.plot(budgets, curves.mean(axis=0), label=arm, linewidth=2)[0].get_color()
        for curve in curves:
            ax.plot(budgets, curve, color=color, alpha=0.2, linewidth=0.8)
    ax.set_xlabel("annotated patches")
    ax.set_ylabel("mean IoU")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def ablation_bars(table: AblationTable, path: str | Path) -> Path:
    """Mean IoU gain per ablation arm, zero line included."""
    path = Path(path)
    rows = table.summary()
    arms = [row["arm"] for row in rows]
    gains = [row["mean_gain"] for row in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    bars = ax.bar(arms, gains)
    ax.bar_label(bars, fmt="%+.3f", fontsize=8)
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_ylabel("mean IoU gain")
    ax.set_title("Component ablation")
    ax.tick_params(axis="x", rotation=30)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def size_scatter(records: list[CropRecord], path: str | Path) -> Path:
    """Single-click gain vs largest-error size, one marker set per method."""
    path = Path(path)
    sizes = [r.error_size for r in records]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.scatter(sizes, [r.ac_gain for r in records], label="forward-only (AC)",
               marker="o", alpha=0.7)
    ax.scatter(sizes, [r.disca_gain for r in records], label="retraining (DISCA)",
               marker="x", alpha=0.7)
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_xlabel("largest error component (pixels)")
    ax.set_ylabel("IoU gain from one click")
    ax.set_title("Correction method vs error size")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def sequential_curves(results: dict[str, SequentialResult],
                      path: str | Path) -> Path:
    """Initial (solid) and final (dashed) IoU per image for each policy."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    for policy, result in results.items():
        images = np.arange(1, len(result.passes) + 1)
        color = ax.plot(images, result.initial_ious, marker="o",
                        label=f"{policy} initial")[0].get_color()
        ax.plot(images, result.final_ious, marker="s", linestyle="--",
                color=color, alpha=0.7, label=f"{policy} final")
    ax.set_xlabel("image in sequence")
    ax.set_ylabel("mean IoU")
    ax.set_xticks(list(range(1, max(len(r.passes) for r in results.values()) + 1)))
    ax.set_title("Weight policy across an image series")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
