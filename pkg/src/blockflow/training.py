"""Stage-1 joint training of velocity blocks and the alignment network,
stage-2 residual feature network training, and the monolithic baseline.

Every loss is a mean over batch rows and vector entries.  Randomness is split
into independent named streams so that a run with one segment and no feature
guidance consumes exactly the same random numbers as the monolithic loop.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
import time

import numpy as np

from .models import (
    Architecture,
    ConditionedNet,
    ModelBundle,
    build_bundle,
    derive_seed,
    make_frn,
)
from .nn import MlpSpec, OptState, TrainingDivergenceError, adamw_init, adamw_step
from .schedule import (
    make_uniform_schedule,
    interpolate_within,
    segment_endpoints,
    segment_velocity_target,
)

__all__ = [
    "TrainConfig",
    "LossReport",
    "Batch",
    "partition_batch",
    "align_loss",
    "bfm_loss",
    "frn_loss",
    "draw_stage1_batch",
    "stage1_loss_and_grads",
    "Stage1Trainer",
    "FrnTrainer",
    "MonolithicTrainer",
    "train_bfm",
    "train_frn",
    "train_monolithic_fm",
    "monolithic_net",
    "matched_monolithic_config",
]

_STREAMS = ("data", "noise", "time", "drop", "partition")


@dataclass
class TrainConfig:
    batch_size: int = 864
    iterations: int = 2000
    lam: float = 0.5
    lr: float = 1e-4
    weight_decay: float = 0.0
    seed: int = 0
    segments: int = 6
    label_drop_prob: float = 0.1
    semfeat: bool = True
    frn_iterations: int = 2000
    frn_residual: bool = True
    arch: Architecture = field(default_factory=Architecture)

    def __post_init__(self):
        if self.segments < 1:
            raise ValueError("segments must be >= 1")
        if self.batch_size < 1 or self.batch_size % self.segments:
            raise ValueError(
                f"batch_size={self.batch_size} must be a positive multiple of segments={self.segments}"
            )
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if not 0.0 <= self.label_drop_prob < 1.0:
            raise ValueError("label_drop_prob must lie in [0, 1)")
        if self.iterations < 0 or self.frn_iterations < 0:
            raise ValueError("iteration counts must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        arch = Architecture(**d.pop("arch", {}))
        known = {f.name for f in fields(cls)}
        return cls(arch=arch, **{k: v for k, v in d.items() if k in known})


@dataclass
class LossReport:
    iteration: int
    loss_bfm: float = float("nan")
    loss_align: float = float("nan")
    loss_total: float = float("nan")
    loss_frn: float = float("nan")
    wall_ms: float = 0.0


def _make_streams(seed: int, stage: int = 1) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence([int(seed), stage]).spawn(len(_STREAMS))
    return {name: np.random.default_rng(s) for name, s in zip(_STREAMS, children)}


def partition_batch(B: int, M: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Split ``range(B)`` into ``M`` random disjoint groups of size ``B // M``.

    Indices inside each group are sorted.
    """
    if M < 1 or B < 1 or B % M:
        raise ValueError(f"batch size {B} is not divisible by {M} segments")
    perm = rng.permutation(B)
    size = B // M
    return [np.sort(perm[m * size:(m + 1) * size]) for m in range(M)]


def _cosine(h, h_star):
    nh = np.linalg.norm(h, axis=-1)
    ns = np.linalg.norm(h_star, axis=-1)
    if np.any(nh == 0) or np.any(ns == 0):
        raise ValueError("cosine similarity is undefined for zero-norm vectors")
    return np.sum(h * h_star, axis=-1) / (nh * ns), nh, ns


def align_loss(h, h_star) -> float:
    """Negative cosine similarity, averaged over rows for batched input."""
    h = np.asarray(h, dtype=np.float64)
    h_star = np.asarray(h_star, dtype=np.float64)
    if h.shape != h_star.shape:
        raise ValueError(f"dimension mismatch: {h.shape} vs {h_star.shape}")
    cos, _, _ = _cosine(h, h_star)
    return float(-np.mean(cos))


def _mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def bfm_loss(v_hat, v_target) -> float:
    return _mse(v_hat, v_target)


def frn_loss(f_hat, f_t) -> float:
    return _mse(f_hat, f_t)


@dataclass
class Batch:
    x1: np.ndarray
    eps: np.ndarray
    labels: np.ndarray
    t: np.ndarray
    groups: list[np.ndarray]


def _check_finite(value, what, iteration):
    if not np.isfinite(value):
        raise TrainingDivergenceError(f"{what} became non-finite at iteration {iteration}: {value}")


def _sample_rows(dataset, streams, B, null_label, drop_prob):
    idx = streams["data"].integers(0, len(dataset.x), size=B)
    x1 = np.asarray(dataset.x[idx], dtype=np.float64)
    labels = np.asarray(dataset.labels[idx], dtype=np.int64)
    eps = streams["noise"].standard_normal(x1.shape)
    drop = streams["drop"].random(B) < drop_prob
    labels = np.where(drop, null_label, labels)
    return x1, eps, labels


def draw_stage1_batch(dataset, streams, schedule, B, null_label, drop_prob) -> Batch:
    x1, eps, labels = _sample_rows(dataset, streams, B, null_label, drop_prob)
    u = streams["time"].random(B)
    groups = partition_batch(B, schedule.M, streams["partition"])
    t = np.empty(B)
    for m, g in enumerate(groups, start=1):
        lo, hi = schedule.bounds(m)
        t[g] = np.minimum(lo + (hi - lo) * u[g], np.nextafter(hi, lo))
    return Batch(x1, eps, labels, t, groups)


def stage1_loss_and_grads(bundle: ModelBundle, batch: Batch, lam: float):
    """Losses and gradients of ``L = L_bfm + lam * L_align`` for one batch.

    Returns ``(report_fields, grads)`` where ``grads`` maps network name to a
    gradient dict.
    """
    schedule = bundle.schedule
    B, d = batch.x1.shape
    x_t = np.empty_like(batch.x1)
    v_tgt = np.empty_like(batch.x1)
    for m, g in enumerate(batch.groups, start=1):
        lo, hi = schedule.bounds(m)
        x_lo, x_hi = segment_endpoints(batch.x1[g], batch.eps[g], lo, hi)
        a = (batch.t[g] - lo) / (hi - lo)
        x_t[g] = interpolate_within(x_lo, x_hi, a)
        v_tgt[g] = segment_velocity_target(x_lo, x_hi, hi - lo)

    f = None
    if bundle.semfeat:
        f, f_cache = bundle.align_net.forward(x_t, batch.t, batch.labels)
        h, h_cache = bundle.proj_head.forward(f)
        h_star = bundle.oracle.encode(batch.x1)
        cos, nh, ns = _cosine(h, h_star)
        l_align = float(-np.mean(cos))
    else:
        l_align = 0.0

    v_hat = np.empty_like(batch.x1)
    caches = []
    for m, g in enumerate(batch.groups, start=1):
        block = bundle.velocity_blocks[m - 1]
        out, cache = block.forward(x_t[g], batch.t[g], batch.labels[g], None if f is None else f[g])
        v_hat[g] = out
        caches.append(cache)
    l_bfm = bfm_loss(v_hat, v_tgt)

    grads = {}
    gv = 2.0 * (v_hat - v_tgt) / (B * d)
    gf = np.zeros_like(f) if f is not None else None
    for m, (g, cache) in enumerate(zip(batch.groups, caches), start=1):
        gb, _, gfm = bundle.velocity_blocks[m - 1].backward(cache, gv[g])
        grads[f"velocity/{m}"] = gb
        if gf is not None:
            gf[g] = gfm
    if bundle.semfeat:
        # d(-cos)/dh, scaled by lam / B.
        gh = -(h_star / (nh * ns)[:, None] - (cos / nh**2)[:, None] * h) * (lam / B)
        grads["proj_head"], gf_align = bundle.proj_head.backward(h_cache, gh)
        grads["align_net"], _, _ = bundle.align_net.backward(f_cache, gf + gf_align)

    return {"loss_bfm": l_bfm, "loss_align": l_align, "loss_total": l_bfm + lam * l_align}, grads


def _opt_for(params, cfg: TrainConfig) -> OptState:
    return adamw_init(params, lr=cfg.lr, weight_decay=cfg.weight_decay)


class Stage1Trainer:
    """Owns the bundle, optimizer states and random streams of a stage-1 run."""

    def __init__(self, config: TrainConfig, dataset, bundle: ModelBundle | None = None):
        self.config = config
        self.dataset = dataset
        if bundle is None:
            bundle = build_bundle(
                make_uniform_schedule(config.segments),
                d_x=dataset.x.shape[1],
                n_classes=dataset.n_classes,
                arch=config.arch,
                semfeat=config.semfeat,
                seed=config.seed,
            )
        self.bundle = bundle
        self.opt = {name: _opt_for(net.params, config)
                    for name, net in bundle.networks().items() if name not in ("oracle", "frn")}
        self.streams = _make_streams(config.seed, stage=1)
        self.iteration = 0
        self.block_updates = np.zeros(bundle.M, dtype=np.int64)
        self.block_samples = np.zeros(bundle.M, dtype=np.int64)

    def step(self) -> LossReport:
        cfg = self.config
        start = time.perf_counter()
        batch = draw_stage1_batch(self.dataset, self.streams, self.bundle.schedule, cfg.batch_size,
                                  self.bundle.dims.n_classes, cfg.label_drop_prob)
        losses, grads = stage1_loss_and_grads(self.bundle, batch, cfg.lam)
        self.iteration += 1
        _check_finite(losses["loss_total"], "stage-1 loss", self.iteration)
        nets = self.bundle.networks()
        for name, g in grads.items():
            nets[name].params, self.opt[name] = adamw_step(nets[name].params, g, self.opt[name])
        for m, grp in enumerate(batch.groups):
            self.block_updates[m] += 1
            self.block_samples[m] += len(grp)
        return LossReport(self.iteration, wall_ms=1e3 * (time.perf_counter() - start), **losses)

    def run(self, n: int | None = None) -> list[LossReport]:
        n = self.config.iterations - self.iteration if n is None else n
        return [self.step() for _ in range(n)]


def train_bfm(config: TrainConfig, dataset) -> tuple[ModelBundle, list[LossReport]]:
    if len(dataset.x) == 0:
        raise ValueError("empty dataset")
    trainer = Stage1Trainer(config, dataset)
    reports = trainer.run()
    return trainer.bundle, reports


class FrnTrainer:
    """Stage 2: regress the residual network onto the frozen alignment features."""

    def __init__(self, bundle: ModelBundle, config: TrainConfig, dataset, residual: bool | None = None):
        if not bundle.semfeat:
            raise ValueError("residual feature training needs a bundle with an alignment network")
        self.bundle = bundle
        self.config = config
        self.dataset = dataset
        self.residual = config.frn_residual if residual is None else residual
        bundle.extra["frn_residual"] = bool(self.residual)
        if bundle.frn is None:
            bundle.frn = make_frn(bundle.dims, bundle.arch, config.seed)
        self.opt = _opt_for(bundle.frn.params, config)
        self.streams = _make_streams(config.seed, stage=2)
        self.iteration = 0

    def targets(self, x1, eps, labels, m, u):
        """Segment-start features, targets, inputs and offsets for one batch."""
        bounds = np.array(self.bundle.schedule.boundaries)
        lo = bounds[m - 1]
        hi = bounds[m]
        t = np.minimum(lo + (hi - lo) * u, np.nextafter(hi, lo))
        b = (t - lo) / (hi - lo)
        x_lo = lo[:, None] * x1 + (1.0 - lo[:, None]) * eps
        x_hi = hi[:, None] * x1 + (1.0 - hi[:, None]) * eps
        x_t = interpolate_within(x_lo, x_hi, b)
        f_start = self.bundle.align_net(x_lo, lo, labels)
        f_t = self.bundle.align_net(x_t, t, labels)
        return f_start, f_t, x_t, t, b

    def loss_and_grads(self, x1, eps, labels, m, u):
        """``L_FRN`` and its gradient w.r.t. the residual network for one batch."""
        f_start, f_t, x_t, t, b = self.targets(x1, eps, labels, m, u)
        r, cache = self.bundle.frn.forward(x_t, t, labels)
        f_hat = f_start + b[:, None] * r if self.residual else r
        loss = frn_loss(f_hat, f_t)
        g = 2.0 * (f_hat - f_t) / f_hat.size
        if self.residual:
            g = g * b[:, None]
        grads, _, _ = self.bundle.frn.backward(cache, g)
        return loss, grads

    def step(self) -> LossReport:
        cfg = self.config
        start = time.perf_counter()
        x1, eps, labels = _sample_rows(self.dataset, self.streams, cfg.batch_size,
                                       self.bundle.dims.n_classes, cfg.label_drop_prob)
        m = self.streams["partition"].integers(1, self.bundle.M + 1, size=cfg.batch_size)
        u = self.streams["time"].random(cfg.batch_size)
        loss, grads = self.loss_and_grads(x1, eps, labels, m, u)
        self.iteration += 1
        _check_finite(loss, "residual feature loss", self.iteration)
        self.bundle.frn.params, self.opt = adamw_step(self.bundle.frn.params, grads, self.opt)
        return LossReport(self.iteration, loss_frn=loss, wall_ms=1e3 * (time.perf_counter() - start))

    def run(self, n: int | None = None) -> list[LossReport]:
        n = self.config.frn_iterations - self.iteration if n is None else n
        return [self.step() for _ in range(n)]


def train_frn(bundle: ModelBundle, config: TrainConfig, dataset, residual: bool | None = None):
    trainer = FrnTrainer(bundle, config, dataset, residual)
    reports = trainer.run()
    return bundle.frn, reports


def monolithic_net(config: TrainConfig, d_x: int, n_classes: int) -> ConditionedNet:
    a = config.arch
    cond = a.velocity_hidden if a.velocity_layers > 1 else d_x
    spec = MlpSpec(d_x, a.velocity_hidden, d_x, a.velocity_layers, cond_dim=cond)
    return ConditionedNet(spec, n_classes, 0, seed=derive_seed(config.seed, "velocity", 0))


def matched_monolithic_config(config: TrainConfig, target_params: int, d_x: int, n_classes: int,
                              max_hidden: int = 2048) -> TrainConfig:
    """Monolithic config whose hidden width brings its parameter count closest to ``target_params``."""
    best = None
    for h in range(2, max_hidden + 1, 2):
        arch = replace(config.arch, velocity_hidden=h)
        cfg = replace(config, segments=1, semfeat=False, lam=0.0, arch=arch)
        n = monolithic_net(cfg, d_x, n_classes).n_params()
        if best is None or abs(n - target_params) < abs(best[0] - target_params):
            best = (n, cfg)
        if n > target_params:
            break
    return best[1]


class MonolithicTrainer:
    """Plain flow matching: one network over the whole of [0, 1)."""

    def __init__(self, config: TrainConfig, dataset):
        self.config = config
        self.dataset = dataset
        self.net = monolithic_net(config, dataset.x.shape[1], dataset.n_classes)
        self.opt = _opt_for(self.net.params, config)
        self.streams = _make_streams(config.seed, stage=1)
        self.iteration = 0

    def step(self) -> LossReport:
        cfg = self.config
        start = time.perf_counter()
        x1, eps, labels = _sample_rows(self.dataset, self.streams, cfg.batch_size,
                                       self.dataset.n_classes, cfg.label_drop_prob)
        t = self.streams["time"].random(cfg.batch_size)
        tc = t[:, None]
        x_t = tc * x1 + (1.0 - tc) * eps
        target = x1 - eps
        v_hat, cache = self.net.forward(x_t, t, labels)
        loss = bfm_loss(v_hat, target)
        self.iteration += 1
        _check_finite(loss, "flow matching loss", self.iteration)
        grads, _, _ = self.net.backward(cache, 2.0 * (v_hat - target) / v_hat.size)
        self.net.params, self.opt = adamw_step(self.net.params, grads, self.opt)
        return LossReport(self.iteration, loss_bfm=loss, loss_align=0.0, loss_total=loss,
                          wall_ms=1e3 * (time.perf_counter() - start))

    def run(self, n: int | None = None) -> list[LossReport]:
        n = self.config.iterations - self.iteration if n is None else n
        return [self.step() for _ in range(n)]


def train_monolithic_fm(config: TrainConfig, dataset) -> tuple[ConditionedNet, list[LossReport]]:
    if len(dataset.x) == 0:
        raise ValueError("empty dataset")
    trainer = MonolithicTrainer(config, dataset)
    return trainer.net, trainer.run()
