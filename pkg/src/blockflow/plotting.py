"""Report figures.  Everything renders off-screen to PNG."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = [
    "plot_losses",
    "plot_samples",
    "plot_radial_profiles",
    "plot_noise_sweep",
    "plot_pca",
    "plot_feature_discrepancy",
]


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_losses(rows: list[dict], path, keys=("loss_bfm", "loss_align", "loss_frn")):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    it = np.array([r["iteration"] for r in rows])
    for k in keys:
        y = np.array([r.get(k, np.nan) for r in rows], dtype=float)
        if np.isfinite(y).any():
            ax.plot(it, y, label=k, lw=1)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_samples(x, path, reference=None, max_points: int = 4000):
    x = np.asarray(x)
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    if reference is not None:
        r = np.asarray(reference)[:max_points]
        ax.scatter(r[:, 0], r[:, 1], s=2, c="0.75", label="data")
    ax.scatter(x[:max_points, 0], x[:max_points, 1], s=2, c="C0", label="samples")
    ax.set_aspect("equal")
    ax.legend(frameon=False, markerscale=4)
    return _save(fig, path)


def plot_radial_profiles(profiles: dict[str, np.ndarray], path):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, p in profiles.items():
        p = np.asarray(p)
        ax.semilogy(np.arange(len(p)), np.maximum(p, 1e-300), label=name)
    ax.set_xlabel("radial frequency bin")
    ax.set_ylabel("mean power")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_noise_sweep(t, se, hfr, path):
    fig, ax1 = plt.subplots(figsize=(5, 3.5))
    ax1.plot(t, se, "o-", c="C0")
    ax1.set_xlabel("t")
    ax1.set_ylabel("spectral entropy", color="C0")
    ax2 = ax1.twinx()
    ax2.plot(t, hfr, "s--", c="C3")
    ax2.set_ylabel("high-frequency ratio", color="C3")
    return _save(fig, path)


def plot_pca(projections, t_of_row, path):
    proj = np.asarray(projections)
    fig, ax = plt.subplots(figsize=(4.5, 4))
    if proj.shape[1] < 2:
        proj = np.column_stack([proj[:, 0], np.zeros(len(proj))])
    sc = ax.scatter(proj[:, 0], proj[:, 1], c=t_of_row, s=6, cmap="viridis")
    fig.colorbar(sc, ax=ax, label="t")
    ax.set_xlabel("PC 1")
    ax.set_ylabel("PC 2")
    return _save(fig, path)


def plot_feature_discrepancy(curves, path):
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for c in curves:
        ax.plot(c.t, c.mse, "o-", ms=3, label=f"segment {c.m}")
    ax.set_xlabel("t")
    ax.set_ylabel("feature MSE to segment start")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)
