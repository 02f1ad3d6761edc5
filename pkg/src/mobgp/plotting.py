"""Optional PNG renderings of prediction and control outputs.

Figures are written with the non-interactive Agg backend and without
timestamp metadata, so identical inputs give identical files.
"""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_predictions(series: dict[str, tuple[np.ndarray, np.ndarray | None]], path) -> Path:
    """Cumulative and incident deaths per region.

    ``series`` maps a region id to (predicted cumulative D, observed cumulative or None).
    """
    fig, (ax_c, ax_i) = plt.subplots(1, 2, figsize=(10, 4))
    for rid in sorted(series):
        pred, obs = series[rid]
        t = np.arange(pred.size)
        (line,) = ax_c.plot(t, pred, label=rid)
        ax_i.plot(t[1:], np.diff(pred), color=line.get_color())
        if obs is not None:
            n = min(obs.size, pred.size)
            ax_c.plot(t[:n], obs[:n], ".", color=line.get_color(), markersize=3)
            ax_i.plot(t[1:n], np.diff(obs[:n]), ".", color=line.get_color(), markersize=3)
    ax_c.set(xlabel="day", ylabel="cumulative deaths")
    ax_i.set(xlabel="day", ylabel="daily deaths")
    ax_c.legend(fontsize="small")
    fig.tight_layout()
    return _save(fig, path)


def plot_control(
    u_star: np.ndarray,
    categories: Sequence[str],
    per_day_cost: np.ndarray,
    H: np.ndarray,
    D: np.ndarray,
    path,
    tau_H: float = float("inf"),
    baseline_D: np.ndarray | None = None,
) -> Path:
    """Schedule, daily cost and the resulting hospital and death curves."""
    fig, axes = plt.subplots(1, 3, figsize=(13, 4))
    t = np.arange(u_star.shape[0])
    for k, name in enumerate(categories):
        axes[0].step(t, u_star[:, k], where="post", label=name)
    axes[0].set(xlabel="day", ylabel="mobility level")
    axes[0].legend(fontsize="small")
    axes[1].bar(t, per_day_cost, width=0.9)
    axes[1].set(xlabel="day", ylabel="cost")
    ts = np.arange(H.size)
    axes[2].plot(ts, H, label="H")
    axes[2].plot(ts, D, label="D")
    if baseline_D is not None:
        axes[2].plot(ts[: baseline_D.size], baseline_D[: ts.size], "--", label="D (observed mobility)")
    if np.isfinite(tau_H):
        axes[2].axhline(tau_H, color="grey", linestyle=":", label="hospital cap")
    axes[2].set(xlabel="day", ylabel="people")
    axes[2].legend(fontsize="small")
    fig.tight_layout()
    return _save(fig, path)


def plot_training(report_rows: Sequence[tuple[int, int, float, float]], path) -> Path:
    """Train and test loss curves for every trial on a log scale."""
    fig, ax = plt.subplots(figsize=(6, 4))
    trials = sorted({r[0] for r in report_rows})
    for k in trials:
        rows = [r for r in report_rows if r[0] == k]
        ep = [r[1] for r in rows]
        (line,) = ax.plot(ep, [r[2] for r in rows], label=f"trial {k}")
        ax.plot(ep, [r[3] for r in rows], "--", color=line.get_color())
    ax.set(xlabel="epoch", ylabel="loss (solid train, dashed test)", yscale="log")
    ax.legend(fontsize="x-small", ncol=2)
    fig.tight_layout()
    return _save(fig, path)
