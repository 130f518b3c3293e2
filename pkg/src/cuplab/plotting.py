"""Optional figures written next to the CSV outputs (requires matplotlib)."""

from __future__ import annotations

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_training(log, cost_limit: float, path, baseline_log=None) -> None:
    plt = _pyplot()
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.4), constrained_layout=True)
    runs = [("CUP", log)] + ([("Lagrangian", baseline_log)] if baseline_log is not None else [])
    for label, run in runs:
        it = run.column("iteration")
        exact = np.all(np.isfinite(run.column("J_exact"))) and len(it)
        axes[0].plot(it, run.column("J_exact" if exact else "J_hat"), label=label)
        axes[1].plot(it, run.column("Jc_exact" if exact else "Jc_hat"), label=label)
        axes[2].plot(it, run.column("nu"), label=label)
    axes[1].axhline(cost_limit, color="k", ls="--", lw=1, label="limit b")
    for ax, title in zip(axes, ("return J", "cost return Jc", "multiplier nu")):
        ax.set_title(title)
        ax.set_xlabel("iteration")
        ax.legend(fontsize=8)
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_campaign(result, path) -> None:
    """Scatter of the measured return gap against both sandwich forms."""
    plt = _pyplot()
    lams = sorted({r["lambda"] for r in result.rows})
    fig, axes = plt.subplots(1, len(lams), figsize=(4 * len(lams), 3.6),
                             constrained_layout=True, squeeze=False)
    for ax, lam in zip(axes[0], lams):
        sub = [r for r in result.rows if r["lambda"] == lam and r["j_diff"] is not None]
        j = np.array([r["j_diff"] for r in sub])
        for lo, hi, name in (("l_minus", "l_plus", "importance-weighted"),
                             ("l_minus_direct", "l_plus_direct", "direct")):
            mid = np.array([(r[lo] + r[hi]) / 2 for r in sub])
            half = np.array([(r[hi] - r[lo]) / 2 for r in sub])
            ax.scatter(j, (j - mid) / np.maximum(half, 1e-300), s=6, label=name)
        ax.axhspan(-1, 1, color="0.9", zorder=0)
        ax.set_title(f"lambda = {lam:g}")
        ax.set_xlabel("J(new) - J(old)")
        ax.set_ylabel("normalised position in [L-, L+]")
        ax.legend(fontsize=8)
    fig.savefig(path, dpi=120)
    plt.close(fig)
