"""Matplotlib figures (loss curves, area histograms, W_eff traces) saved as SVG.

Figures are made reproducible by fixing the SVG hash salt and dropping the
date metadata, so reruns produce identical files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_loss", "plot_area_histogram", "plot_weff"]

_RC = {
    "svg.hashsalt": "diffvor",
    "svg.fonttype": "none",
    "path.simplify": False,
}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def plot_loss(path, losses: Sequence[float], title: str = "loss", log: bool = True) -> Path:
    losses = np.asarray(losses, dtype=float)
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(np.arange(len(losses)), losses, color="tab:red", lw=1.2)
        if log and len(losses) and np.all(losses > 0):
            ax.set_yscale("log")
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.set_title(title)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        return _save(fig, path)


def plot_area_histogram(path, final_areas: Sequence[float],
                        initial_areas: Optional[Sequence[float]] = None,
                        target: Optional[float] = None, bins: int = 40) -> Path:
    final_areas = np.asarray(final_areas, dtype=float)
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        data = [final_areas] if initial_areas is None else [np.asarray(initial_areas, float), final_areas]
        lo = min(float(d.min()) for d in data if len(d))
        hi = max(float(d.max()) for d in data if len(d))
        if hi <= lo:
            hi = lo + 1e-12
        edges = np.linspace(lo, hi, bins + 1)
        if initial_areas is not None:
            ax.hist(data[0], bins=edges, color="0.7", label="initial")
        ax.hist(final_areas, bins=edges, color="tab:red", alpha=0.8, label="final")
        if target is not None:
            ax.axvline(target, color="k", ls="--", lw=1, label=f"{target:g}")
        ax.set_xlabel("cell area")
        ax.set_ylabel("count")
        ax.legend()
        fig.tight_layout()
        return _save(fig, path)


def plot_weff(path, weff: np.ndarray) -> Path:
    """``weff`` has shape (steps, hospitals)."""
    weff = np.asarray(weff, dtype=float)
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        steps = np.arange(weff.shape[0])
        for j in range(weff.shape[1]):
            ax.plot(steps, weff[:, j], lw=1)
        ax.axhline(1.0, color="k", ls="--", lw=1)
        ax.set_xlabel("step")
        ax.set_ylabel("W_eff")
        fig.tight_layout()
        return _save(fig, path)
