"""Figures written next to the CSV reports."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .candidate_map import CandidateMap  # noqa: E402


def plot_sweep(curves: dict[str, Sequence[tuple[float, float]]], path: str | Path) -> Path:
    """Rank1 against the IoU threshold, one line per named curve."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, pts in curves.items():
        mu, v = zip(*pts) if pts else ((), ())
        ax.plot(mu, v, marker="o", ms=3, label=name)
    ax.set_xlabel("IoU threshold")
    ax.set_ylabel("Rank1 (%)")
    ax.set_ylim(0, 100)
    ax.grid(alpha=0.3)
    if len(curves) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_ablation(names: Sequence[str], values: dict[str, Sequence[float]], path: str | Path) -> Path:
    """Grouped bars: one group per ablation row, one bar per metric."""
    fig, ax = plt.subplots(figsize=(1.2 * len(names) + 2, 3.5))
    x = np.arange(len(names))
    width = 0.8 / max(len(values), 1)
    for k, (metric, vals) in enumerate(values.items()):
        ax.bar(x + k * width - 0.4 + width / 2, vals, width, label=metric)
    ax.set_xticks(x, names)
    ax.set_ylabel("%")
    ax.set_ylim(0, 100)
    ax.legend(fontsize=8, loc="upper left", bbox_to_anchor=(1.0, 1.0))
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_score_map(scores: np.ndarray, cmap: CandidateMap, path: str | Path, gt: tuple[int, int] | None = None) -> Path:
    """Candidate scores on the start x end lattice; invalid cells are blank."""
    grid = np.full((cmap.T, cmap.T), np.nan)
    grid[np.asarray(cmap.starts), np.asarray(cmap.ends)] = np.asarray(scores, dtype=float)
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(grid, origin="upper", cmap="viridis", vmin=0, vmax=1)
    if gt is not None:
        ax.scatter([gt[1]], [gt[0]], marker="x", c="red", s=40)
    ax.set_xlabel("end index")
    ax.set_ylabel("start index")
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_training_log(rows: Sequence[dict], path: str | Path) -> Path:
    """Mean loss per epoch, with validation Rank1 on a twin axis when present."""
    epochs = [int(r["epoch"]) for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(epochs, [float(r["mean_loss"]) for r in rows], color="k", label="loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    val_keys = [k for k in (rows[0] if rows else {}) if k.startswith("val_")]
    if val_keys:
        ax2 = ax.twinx()
        for k in val_keys:
            ax2.plot(epochs, [float(r[k]) for r in rows], ls="--", label=k)
        ax2.set_ylabel("val Rank1 (%)")
        ax2.set_ylim(0, 100)
        ax2.legend(fontsize=8, loc="center right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
