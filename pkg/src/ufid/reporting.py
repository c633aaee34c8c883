"""Figure rendering for evaluation outputs (headless matplotlib)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def save_score_histogram(neg_scores: Sequence[float], pos_scores: Sequence[float],
                         tau: float, path: str | Path, bins: int = 30) -> None:
    """Overlaid score distributions for clean and attacked queries."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(neg_scores, bins=bins, alpha=0.6, label="clean", color="tab:blue")
    ax.hist(pos_scores, bins=bins, alpha=0.6, label="backdoor", color="tab:red")
    ax.axvline(tau, color="black", linestyle="--", linewidth=1, label=f"tau = {tau:.3f}")
    ax.set_xlabel("detection score")
    ax.set_ylabel("queries")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_sweep_curve(parameter: str, values: Sequence[float], aucs: Sequence[float],
                     path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(values, aucs, marker="o")
    ax.set_xlabel(parameter)
    ax.set_ylabel("AUC")
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
