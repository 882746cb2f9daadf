"""Matplotlib rendering of report figures, written next to the CSV outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DPI = 120
_OBJECTIVE_COLOR = "tab:orange"
_NORM_COLOR = "tab:blue"


def save_progression(rows: list[dict], path: str | Path, title: str = "") -> None:
    """Objective value and tightening norm per evaluation, init/BO boundary marked."""
    idx = [r["index"] for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(idx, [r["raw_objective"] for r in rows], ".", color=_OBJECTIVE_COLOR, label="objective")
    ax.set_xlabel("evaluation")
    ax.set_ylabel("objective", color=_OBJECTIVE_COLOR)
    ax2 = ax.twinx()
    ax2.plot(idx, [r["l1_norm"] for r in rows], ".", color=_NORM_COLOR, alpha=0.6, label="l1 norm")
    ax2.set_ylabel("l1 norm of tightening", color=_NORM_COLOR)
    bo_start = next((r["index"] for r in rows if r["phase"] == "bo"), None)
    if bo_start is not None:
        ax.axvline(bo_start - 0.5, color="gray", linestyle=":", linewidth=1)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_failure_histogram(counts: list[int], path: str | Path, title: str = "") -> None:
    counts = np.asarray(counts)
    fig, ax = plt.subplots(figsize=(6, 4))
    bins = np.arange(counts.min() - 0.5, counts.max() + 1.5)
    ax.hist(counts, bins=bins, color=_NORM_COLOR, edgecolor="white")
    ax.set_xlabel("line failures per cascade")
    ax.set_ylabel("cascades")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_failure_order(matrix: np.ndarray, path: str | Path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(6, 5))
    image = ax.imshow(matrix, aspect="auto", origin="lower", cmap="viridis")
    ax.set_xlabel("failure position in cascade")
    ax.set_ylabel("line id")
    fig.colorbar(image, ax=ax, label="count")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_bar(labels: list[str], values: list[float], ylabel: str, path: str | Path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(labels)), 4))
    ax.bar(range(len(labels)), values, color=_NORM_COLOR)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=30, ha="right")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
