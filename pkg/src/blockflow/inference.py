"""Segment-by-segment Euler sampling with MAC instrumentation."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .flops import FlopsLedger
from .models import (
    GuidanceConfig,
    ModelBundle,
    UnsupportedOperationError,
    align_forward,
    cfg_combine,
    frn_approximate,
    velocity_eval,
)

__all__ = [
    "SamplerConfig",
    "SamplingError",
    "euler_step",
    "draw_labels",
    "sample_full",
    "sample_frn",
    "sample",
]

MODES = ("full", "frn")
_MODE_ALIASES = {"fullalign": "full", "residualapprox": "frn", "full": "full", "frn": "frn"}


class SamplingError(FloatingPointError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    steps_per_segment: int = 41
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    mode: str = "full"
    n_samples: int = 1000
    seed: int = 0
    chunk_size: int = 256

    def __post_init__(self):
        if not isinstance(self.steps_per_segment, (int, np.integer)) or self.steps_per_segment < 1:
            raise ValueError(f"steps_per_segment must be a positive integer, got {self.steps_per_segment!r}")
        mode = _MODE_ALIASES.get(str(self.mode).lower())
        if mode is None:
            raise ValueError(f"unknown sampler mode {self.mode!r}; expected one of {MODES}")
        object.__setattr__(self, "mode", mode)
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")

    @property
    def guided(self) -> bool:
        return self.guidance.w != 1.0


def euler_step(x, v, dt: float):
    if not dt > 0:
        raise ValueError(f"step size must be positive, got {dt}")
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
        raise SamplingError("non-finite state or velocity")
    return x + dt * v


def draw_labels(cfg: SamplerConfig, n_classes: int) -> np.ndarray:
    """Class labels used when none are given; uniform over the real classes."""
    return np.random.default_rng([cfg.seed, 7]).integers(0, n_classes, size=cfg.n_samples)


def _run_chunk(bundle: ModelBundle, cfg: SamplerConfig, x, labels, ledger, trace):
    K = cfg.steps_per_segment
    passes = [("cond", labels)]
    if cfg.guided:
        passes.append(("uncond", np.full_like(labels, bundle.dims.n_classes)))
    step = 0
    for m in range(1, bundle.M + 1):
        lo, hi = bundle.schedule.bounds(m)
        dt = (hi - lo) / K
        f_start = {}
        for k in range(K):
            ledger.begin_step(step)
            t = lo + k * dt
            v = {}
            for pass_, c in passes:
                f = None
                if bundle.semfeat:
                    if cfg.mode == "frn" and k > 0:
                        b = (t - lo) / (hi - lo)
                        f = frn_approximate(bundle, f_start[pass_], x, t, c, b, ledger=ledger, pass_=pass_)
                    else:
                        f = align_forward(bundle, x, t, c, ledger=ledger, pass_=pass_)
                        if k == 0:
                            f_start[pass_] = f
                v[pass_] = velocity_eval(bundle, m, x, t, c, f, ledger=ledger, pass_=pass_)
            vel = cfg_combine(v["cond"], v["uncond"], cfg.guidance.w) if cfg.guided else v["cond"]
            try:
                x = euler_step(x, vel, dt)
            except SamplingError:
                raise SamplingError(f"non-finite state at segment {m}, step {k} (t={t:.6g})") from None
            step += 1
        if trace is not None:
            trace.append(x.copy())
    return x


def _sample(bundle: ModelBundle, cfg: SamplerConfig, labels=None, *, threads: int = 1, trace=None):
    n, d = cfg.n_samples, bundle.dims.d_x
    if labels is None:
        labels = draw_labels(cfg, bundle.dims.n_classes)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if np.any(labels < 0) or np.any(labels > bundle.dims.n_classes):
        raise ValueError("label outside the class range")
    starts = list(range(0, n, cfg.chunk_size))
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(starts))

    def work(i):
        lo = starts[i]
        hi = min(lo + cfg.chunk_size, n)
        x0 = np.random.default_rng(seeds[i]).standard_normal((hi - lo, d))
        ledger = FlopsLedger(hi - lo)
        chunk_trace = [] if trace is not None else None
        x = _run_chunk(bundle, cfg, x0, labels[lo:hi], ledger, chunk_trace)
        return x0, x, ledger, chunk_trace

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, range(len(starts))))
    else:
        results = [work(i) for i in range(len(starts))]

    ledger = FlopsLedger(n)
    for _, _, chunk_ledger, _ in results:
        ledger.merge(chunk_ledger)
    if trace is not None:
        trace.append(np.concatenate([r[0] for r in results]))
        for m in range(bundle.M):
            trace.append(np.concatenate([r[3][m] for r in results]))
    return np.concatenate([r[1] for r in results]), ledger


def sample_full(bundle: ModelBundle, cfg: SamplerConfig, labels=None, *, threads: int = 1, trace=None):
    """Run the alignment network at every solver step.

    Returns ``(samples, ledger)``.  If ``trace`` is a list it receives the
    initial noise followed by the state at the end of every segment.
    """
    if cfg.mode != "full":
        raise ValueError(f"sample_full needs mode 'full', got {cfg.mode!r}")
    return _sample(bundle, cfg, labels, threads=threads, trace=trace)


def sample_frn(bundle: ModelBundle, cfg: SamplerConfig, labels=None, *, threads: int = 1, trace=None):
    """Run the alignment network once per segment and the residual network elsewhere."""
    if cfg.mode != "frn":
        raise ValueError(f"sample_frn needs mode 'frn', got {cfg.mode!r}")
    if not bundle.semfeat:
        raise UnsupportedOperationError("residual sampling needs a bundle with an alignment network")
    if bundle.frn is None:
        raise UnsupportedOperationError("bundle has no trained feature residual network; run train-frn first")
    return _sample(bundle, cfg, labels, threads=threads, trace=trace)


def sample(bundle: ModelBundle, cfg: SamplerConfig, labels=None, *, threads: int = 1, trace=None):
    fn = sample_full if cfg.mode == "full" else sample_frn
    return fn(bundle, cfg, labels, threads=threads, trace=trace)
