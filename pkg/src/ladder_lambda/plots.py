"""Figures written next to CLI reports (PNG, Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def batch_histogram(estimates, path, reference=None, title=None):
    """Histogram of per-batch lambda estimates, with an optional reference line."""
    est = np.asarray(estimates, dtype=float)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.hist(est, bins=max(5, min(40, est.size // 5)), color="0.6", edgecolor="0.2")
    ax.axvline(est.mean(), color="C0", label=f"mean {est.mean():.4f}")
    if reference is not None:
        ax.axvline(reference, color="C3", ls="--", label=f"reference {reference:.4f}")
    ax.set_xlabel(r"$\hat\lambda$")
    ax.set_ylabel("batches")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def error_vs_time(seconds, rel_errors, path, labels=None, xlabel="seconds"):
    """Relative standard error against budget on log-log axes.

    ``rel_errors`` is one series per scheme, aligned with ``seconds``; any
    budget measure (pairs, batches) can stand in for seconds.
    """
    fig, ax = plt.subplots(figsize=(5, 3.5))
    series = np.atleast_2d(np.asarray(rel_errors, dtype=float))
    for i, row in enumerate(series):
        ax.loglog(seconds, row, marker="o", label=labels[i] if labels else None)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("relative standard error")
    if labels:
        ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def estimating_curve(thetas, values, path, root=None):
    """Normalized estimating function against theta."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(thetas, values, color="C0")
    ax.axhline(0.0, color="0.5", lw=0.8)
    if root is not None:
        ax.axvline(root, color="C3", ls="--", label=rf"$\hat\lambda$ = {root:.4f}")
        ax.legend(frameon=False, fontsize=8)
    ax.set_xscale("log")
    ax.set_xlabel(r"$\theta$")
    ax.set_ylabel("normalized g")
    return _save(fig, path)


def dp_heatmap(score_grid, path, seq_a="", seq_b="", ladder=None):
    """Global-score square with ``seq_a`` down the rows and ``seq_b`` across."""
    g = np.asarray(score_grid, dtype=float)
    fig, ax = plt.subplots(figsize=(0.45 * g.shape[1] + 2, 0.45 * g.shape[0] + 1))
    masked = np.ma.masked_invalid(g)
    im = ax.imshow(masked, cmap="viridis", origin="upper")
    fig.colorbar(im, ax=ax, shrink=0.8)
    if g.size <= 900:
        for (i, j), v in np.ndenumerate(g):
            if np.isfinite(v):
                ax.text(j, i, f"{v:g}", ha="center", va="center", fontsize=6, color="w")
    ax.set_xticks(range(g.shape[1]))
    ax.set_yticks(range(g.shape[0]))
    ax.set_xticklabels([""] + list(seq_b) if seq_b else range(g.shape[1]), fontsize=7)
    ax.set_yticklabels([""] + list(seq_a) if seq_a else range(g.shape[0]), fontsize=7)
    for n in ladder or ():
        ax.add_patch(plt.Rectangle((-0.5, -0.5), n + 1, n + 1, fill=False, ec="r", lw=0.8))
    return _save(fig, path)
