"""Principal components by power iteration with deflation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["PCAResult", "pca_top_k"]


@dataclass(frozen=True)
class PCAResult:
    components: np.ndarray  # (k, dim), rows are unit eigenvectors
    eigenvalues: np.ndarray  # (k,), descending
    mean: np.ndarray
    projections: np.ndarray  # (n, k)

    def reconstruct(self) -> np.ndarray:
        return self.mean + self.projections @ self.components


def _leading_eigenpair(C, max_iter, tol):
    dim = C.shape[0]
    # Fixed start with incommensurate entries keeps runs deterministic.
    v = np.sqrt(np.arange(2, dim + 2, dtype=np.float64))
    v /= np.linalg.norm(v)
    for _ in range(max_iter):
        w = C @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0, v
        w /= norm
        if np.linalg.norm(w - v) < tol or np.linalg.norm(w + v) < tol:
            v = w
            break
        v = w
    return float(v @ C @ v), v


def pca_top_k(features, k: int, *, max_iter: int = 20000, tol: float = 1e-13) -> PCAResult:
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or len(X) < 2:
        raise ValueError("need at least two feature vectors")
    n, dim = X.shape
    if not 1 <= k <= dim:
        raise ValueError(f"k={k} must lie in 1..{dim}")
    mean = X.mean(axis=0)
    Xc = X - mean
    C = Xc.T @ Xc / (n - 1)
    if not np.any(C):
        raise ValueError("all feature vectors are identical")
    comps, vals = [], []
    R = C.copy()
    for _ in range(k):
        lam, v = _leading_eigenpair(R, max_iter, tol)
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        comps.append(v)
        vals.append(lam)
        R = R - lam * np.outer(v, v)
    components = np.array(comps)
    return PCAResult(components, np.array(vals), mean, Xc @ components.T)
