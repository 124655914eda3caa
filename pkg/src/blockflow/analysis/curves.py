"""Discrete Fréchet distance between sampled curves."""

from __future__ import annotations

import numpy as np

from .spectral import RadialProfile

__all__ = ["discrete_frechet", "frechet_curve_distance", "profile_points"]


def discrete_frechet(P, Q) -> float:
    """Eiter-Mannila dynamic program over the pairwise point-distance matrix.

    ``P`` and ``Q`` are ``(p, d)`` and ``(q, d)`` vertex arrays.
    """
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    if len(P) == 0 or len(Q) == 0:
        raise ValueError("curves must have at least one vertex")
    dist = np.sqrt(((P[:, None, :] - Q[None, :, :]) ** 2).sum(axis=-1))
    p, q = dist.shape
    ca = np.empty((p, q))
    ca[0, 0] = dist[0, 0]
    for i in range(1, p):
        ca[i, 0] = max(ca[i - 1, 0], dist[i, 0])
    for j in range(1, q):
        ca[0, j] = max(ca[0, j - 1], dist[0, j])
    for i in range(1, p):
        for j in range(1, q):
            ca[i, j] = max(min(ca[i - 1, j], ca[i - 1, j - 1], ca[i, j - 1]), dist[i, j])
    return float(ca[-1, -1])


def profile_points(profile) -> np.ndarray:
    """``(index, value)`` vertices of a radial profile or a plain value sequence."""
    values = profile.power if isinstance(profile, RadialProfile) else np.asarray(profile, dtype=np.float64)
    return np.column_stack([np.arange(len(values), dtype=np.float64), values])


def frechet_curve_distance(p, q) -> float:
    p_pts, q_pts = profile_points(p), profile_points(q)
    if len(p_pts) != len(q_pts):
        raise ValueError(f"profile lengths differ: {len(p_pts)} vs {len(q_pts)}")
    return discrete_frechet(p_pts, q_pts)
