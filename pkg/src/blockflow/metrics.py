"""Two-sample distances used in place of image-quality metrics at toy scale."""

from __future__ import annotations

import numpy as np

__all__ = [
    "mmd_rbf",
    "sliced_wasserstein",
    "gaussian_w2",
    "gaussian_w2_samples",
    "psd_sqrt",
]


def _as_set(X, name):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or len(X) == 0:
        raise ValueError(f"{name} must be a non-empty (n, d) sample set")
    return X


def _pair(X, Y):
    X, Y = _as_set(X, "X"), _as_set(Y, "Y")
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    return X, Y


def _sq_dists(A, B):
    d = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d, 0.0)


def mmd_rbf(X, Y, bandwidth: float) -> float:
    """Biased (V-statistic) squared MMD with a Gaussian kernel."""
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    X, Y = _pair(X, Y)
    g = 1.0 / (2.0 * bandwidth**2)
    kxx = np.exp(-g * _sq_dists(X, X)).mean()
    kyy = np.exp(-g * _sq_dists(Y, Y)).mean()
    kxy = np.exp(-g * _sq_dists(X, Y)).mean()
    return float(max(kxx + kyy - 2.0 * kxy, 0.0))


def sliced_wasserstein(X, Y, n_projections: int = 128, seed: int = 0) -> float:
    """Mean over random unit directions of the 1D 2-Wasserstein distance.

    The larger set is subsampled without replacement to the size of the
    smaller one.
    """
    if n_projections < 1:
        raise ValueError("n_projections must be >= 1")
    X, Y = _pair(X, Y)
    dir_rng, sub_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    n = min(len(X), len(Y))
    if len(X) > n:
        X = X[np.sort(sub_rng.choice(len(X), n, replace=False))]
    elif len(Y) > n:
        Y = Y[np.sort(sub_rng.choice(len(Y), n, replace=False))]
    dirs = dir_rng.standard_normal((n_projections, X.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    px = np.sort(X @ dirs.T, axis=0)
    py = np.sort(Y @ dirs.T, axis=0)
    return float(np.mean(np.sqrt(np.mean((px - py) ** 2, axis=0))))


def _check_cov(S, name):
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    if S.shape[0] != S.shape[1] or not np.allclose(S, S.T, atol=1e-12 * max(1.0, np.abs(S).max())):
        raise ValueError(f"{name} must be a symmetric matrix")
    if np.linalg.eigvalsh(S).min() < -1e-10 * max(1.0, np.abs(S).max()):
        raise ValueError(f"{name} is not positive semidefinite")
    return S


def psd_sqrt(S) -> np.ndarray:
    """Principal square root of a symmetric PSD matrix (closed form for 2x2)."""
    S = np.asarray(S, dtype=np.float64)
    if S.shape == (2, 2):
        det = max(S[0, 0] * S[1, 1] - S[0, 1] * S[1, 0], 0.0)
        s = np.sqrt(det)
        tau = np.sqrt(max(S[0, 0] + S[1, 1] + 2.0 * s, 0.0))
        if tau > 0:
            return (S + s * np.eye(2)) / tau
        return np.zeros((2, 2))
    w, V = np.linalg.eigh((S + S.T) / 2.0)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def gaussian_w2(mu1, cov1, mu2, cov2) -> float:
    """2-Wasserstein distance between two Gaussians (Bures formula)."""
    mu1 = np.atleast_1d(np.asarray(mu1, dtype=np.float64))
    mu2 = np.atleast_1d(np.asarray(mu2, dtype=np.float64))
    cov1, cov2 = _check_cov(cov1, "cov1"), _check_cov(cov2, "cov2")
    if not (mu1.shape == mu2.shape and cov1.shape == cov2.shape == (len(mu1), len(mu1))):
        raise ValueError("mean and covariance dimensions disagree")
    r2 = psd_sqrt(cov2)
    cross = psd_sqrt(r2 @ cov1 @ r2)
    w2 = np.sum((mu1 - mu2) ** 2) + np.trace(cov1 + cov2 - 2.0 * cross)
    return float(np.sqrt(max(w2, 0.0)))


def gaussian_w2_samples(X, Y) -> float:
    """Fit a Gaussian to each set and return their 2-Wasserstein distance."""
    X, Y = _pair(X, Y)
    return gaussian_w2(X.mean(0), np.atleast_2d(np.cov(X.T)), Y.mean(0), np.atleast_2d(np.cov(Y.T)))
