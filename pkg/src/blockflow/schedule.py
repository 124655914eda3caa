"""Temporal partitioning of [0, 1] and the segment interpolation arithmetic.

Time runs from pure noise at ``t = 0`` to clean data at ``t = 1`` along the
linear path ``x_t = t * x1 + (1 - t) * eps``.  The trajectory is split into
``M`` half-open segments ``[t_{m-1}, t_m)``; segment indices are 1-based.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SegmentSchedule",
    "SegmentCoords",
    "LinearPath",
    "make_uniform_schedule",
    "segment_index",
    "segment_endpoints",
    "interpolate_within",
    "segment_velocity_target",
]


@dataclass(frozen=True)
class SegmentSchedule:
    boundaries: tuple[float, ...]

    def __post_init__(self):
        b = self.boundaries
        if len(b) < 2:
            raise ValueError("a schedule needs at least two boundaries")
        if b[0] != 0.0 or b[-1] != 1.0:
            raise ValueError("boundaries must start at 0 and end at 1")
        if any(hi <= lo for lo, hi in zip(b[:-1], b[1:])):
            raise ValueError("boundaries must be strictly increasing")

    @property
    def M(self) -> int:
        return len(self.boundaries) - 1

    def bounds(self, m: int) -> tuple[float, float]:
        """``(t_{m-1}, t_m)`` for 1-based segment ``m``."""
        if not 1 <= m <= self.M:
            raise IndexError(f"segment {m} outside 1..{self.M}")
        return self.boundaries[m - 1], self.boundaries[m]

    def width(self, m: int) -> float:
        lo, hi = self.bounds(m)
        return hi - lo


@dataclass(frozen=True)
class SegmentCoords:
    m: int
    a: float
    dt: float

    @property
    def b(self) -> float:
        # Normalized offset used by the residual feature path; same value as a.
        return self.a


class LinearPath:
    """alpha(t) = t on the data term, sigma(t) = 1 - t on the noise term."""

    @staticmethod
    def alpha(t):
        return t

    @staticmethod
    def sigma(t):
        return 1.0 - t


def make_uniform_schedule(M: int) -> SegmentSchedule:
    if isinstance(M, bool) or not isinstance(M, (int, np.integer)) or M < 1:
        raise ValueError(f"number of segments must be a positive integer, got {M!r}")
    M = int(M)
    return SegmentSchedule(tuple(m / M for m in range(M + 1)))


def segment_index(t: float, schedule: SegmentSchedule) -> SegmentCoords:
    if not 0.0 <= t < 1.0:
        raise ValueError(f"t={t} outside [0, 1)")
    # Rightmost boundary <= t gives the owning half-open interval.
    m = int(np.searchsorted(schedule.boundaries, t, side="right"))
    lo, hi = schedule.bounds(m)
    dt = hi - lo
    return SegmentCoords(m=m, a=(t - lo) / dt, dt=dt)


def _check_same_shape(u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    return u, v


def segment_endpoints(x1, eps, t_lo: float, t_hi: float):
    """Segment start and end states built from one shared noise draw."""
    x1, eps = _check_same_shape(x1, eps)
    if not 0.0 <= t_lo < t_hi <= 1.0:
        raise ValueError(f"need 0 <= t_lo < t_hi <= 1, got {t_lo}, {t_hi}")
    x_lo = t_lo * x1 + (1.0 - t_lo) * eps
    x_hi = t_hi * x1 + (1.0 - t_hi) * eps
    return x_lo, x_hi


def interpolate_within(x_lo, x_hi, a):
    """``(1 - a) * x_lo + a * x_hi``.

    ``a`` may be a :class:`SegmentCoords`, a scalar, or an array broadcast
    against the leading (batch) axis.
    """
    x_lo, x_hi = _check_same_shape(x_lo, x_hi)
    if isinstance(a, SegmentCoords):
        a = a.a
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1 and x_lo.ndim == 2:
        a = a[:, None]
    return (1.0 - a) * x_lo + a * x_hi


def segment_velocity_target(x_lo, x_hi, dt: float):
    x_lo, x_hi = _check_same_shape(x_lo, x_hi)
    if not dt > 0:
        raise ValueError(f"segment width must be positive, got {dt}")
    return (x_hi - x_lo) / dt
