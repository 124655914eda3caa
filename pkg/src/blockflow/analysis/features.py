"""Feature-space diagnostics of a trained alignment network."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import spearmanr

from ..models import ModelBundle, UnsupportedOperationError

__all__ = ["DiscrepancyCurve", "feature_discrepancy_curve", "collect_features"]


@dataclass(frozen=True)
class DiscrepancyCurve:
    m: int
    t: np.ndarray
    mse: np.ndarray

    @property
    def spearman(self) -> float:
        return float(spearmanr(self.t, self.mse).statistic)


def _rows(dataset, n_samples, rng):
    idx = rng.choice(len(dataset.x), size=min(n_samples, len(dataset.x)), replace=False)
    return np.asarray(dataset.x[idx], dtype=np.float64), np.asarray(dataset.labels[idx], dtype=np.int64)


def feature_discrepancy_curve(bundle: ModelBundle, dataset, n_samples: int = 50, n_grid: int = 8,
                              seed: int = 0) -> list[DiscrepancyCurve]:
    """Per segment, MSE between the segment-start feature and the feature at ``t``.

    The same clean samples and noise draws are used at every grid point; the
    grid is ``t_{m-1} + j / n_grid * width`` for ``j = 0 .. n_grid - 1``.
    """
    if bundle.align_net is None:
        raise UnsupportedOperationError("bundle has no alignment network")
    rng = np.random.default_rng(seed)
    curves = []
    for m in range(1, bundle.M + 1):
        x1, labels = _rows(dataset, n_samples, rng)
        eps = rng.standard_normal(x1.shape)
        lo, hi = bundle.schedule.bounds(m)
        f_start = bundle.align_net(lo * x1 + (1.0 - lo) * eps, lo, labels)
        ts = lo + (hi - lo) * np.arange(n_grid) / n_grid
        mse = np.empty(n_grid)
        for j, t in enumerate(ts):
            f_t = bundle.align_net(t * x1 + (1.0 - t) * eps, t, labels)
            mse[j] = np.mean((f_t - f_start) ** 2)
        curves.append(DiscrepancyCurve(m, ts, mse))
    return curves


def collect_features(bundle: ModelBundle, dataset, timesteps, n_samples: int = 64, seed: int = 0):
    """Alignment features of the same samples at several noise levels.

    Returns ``(features, t_of_row, sample_of_row)``.
    """
    if bundle.align_net is None:
        raise UnsupportedOperationError("bundle has no alignment network")
    rng = np.random.default_rng(seed)
    x1, labels = _rows(dataset, n_samples, rng)
    eps = rng.standard_normal(x1.shape)
    feats, ts, ids = [], [], []
    for t in timesteps:
        feats.append(bundle.align_net(t * x1 + (1.0 - t) * eps, t, labels))
        ts.append(np.full(len(x1), float(t)))
        ids.append(np.arange(len(x1)))
    return np.concatenate(feats), np.concatenate(ts), np.concatenate(ids)
