"""Matplotlib figures rendered next to the CSV/JSON reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

# fixed metadata keeps PNG output byte-stable across runs
_PNG_META = {"Software": "maskcount"}


def save_metrics_figure(rows: list[dict], path) -> None:
    """Bar chart of MAE and RMSE per method."""
    methods = [row["method"] for row in rows]
    mae = [row["mae"] for row in rows]
    rmse = [row["rmse"] for row in rows]
    x = np.arange(len(methods))
    fig, ax = plt.subplots(figsize=(max(6.0, 1.1 * len(methods)), 4.0))
    ax.bar(x - 0.2, mae, width=0.4, label="MAE", color="#3465a4")
    ax.bar(x + 0.2, rmse, width=0.4, label="RMSE", color="#f57900")
    ax.set_xticks(x)
    ax.set_xticklabels(methods, rotation=30, ha="right")
    ax.set_ylabel("counting error")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def save_timing_figure(columns: list[tuple[str, float]], path) -> None:
    """Bar chart of mean per-scene seconds per masking method."""
    names = [name for name, _ in columns]
    secs = [sec for _, sec in columns]
    fig, ax = plt.subplots(figsize=(max(6.0, 1.0 * len(names)), 4.0))
    ax.bar(np.arange(len(names)), secs, color="#73d216")
    ax.set_xticks(np.arange(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right")
    ax.set_ylabel("seconds per scene")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def save_scene_panel(
    image: np.ndarray,
    density: np.ndarray,
    mask: np.ndarray | None,
    path,
    title: str = "",
) -> None:
    """Side-by-side image / predicted density / mask panel for one scene."""
    n = 2 if mask is None else 3
    fig, axes = plt.subplots(1, n, figsize=(4.0 * n, 4.0))
    axes[0].imshow(np.transpose(image, (1, 2, 0)))
    axes[0].set_title(title or "scene")
    axes[1].imshow(density, cmap="magma")
    axes[1].set_title("density")
    if mask is not None:
        axes[2].imshow(mask, cmap="gray", vmin=0.0, vmax=1.0)
        axes[2].set_title("mask")
    for ax in axes:
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)


def save_loss_curve(history: list[float], path, label: str) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(np.arange(1, len(history) + 1), history, color="#3465a4")
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    ax.set_title(label)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
