"""The network bundle: per-segment velocity blocks, the shared feature
alignment network, its projection head, the feature residual network and the
frozen oracle encoder, plus the functional evaluation API used by sampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .flops import NetCost
from .nn import (
    MlpSpec,
    init_params,
    mlp_backward,
    mlp_forward,
    params_checksum,
    timestep_embedding,
)
from .schedule import SegmentCoords, SegmentSchedule, segment_index

__all__ = [
    "Mlp",
    "ConditionedNet",
    "OracleEncoder",
    "Architecture",
    "BundleDims",
    "ModelBundle",
    "GuidanceConfig",
    "UnsupportedOperationError",
    "derive_seed",
    "build_bundle",
    "single_block_bundle",
    "oracle_encode",
    "align_forward",
    "project_feature",
    "velocity_eval",
    "frn_approximate",
    "cfg_combine",
]

_ROLE_IDS = {"velocity": 1, "align": 2, "proj": 3, "frn": 4, "oracle": 5}


class UnsupportedOperationError(RuntimeError):
    pass


def derive_seed(seed: int, role: str, index: int = 0) -> int:
    ss = np.random.SeedSequence([int(seed), _ROLE_IDS[role], int(index)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


class Mlp:
    """Unconditioned SiLU MLP with its parameters."""

    def __init__(self, spec: MlpSpec, seed: int = 0, params=None):
        self.spec = spec
        self.seed = seed
        self.params = params if params is not None else init_params(spec, seed)

    def forward(self, x, counter=None):
        return mlp_forward(self.params, x, counter=counter)

    def backward(self, cache, grad_y):
        grads, gx, _ = mlp_backward(cache, grad_y)
        return grads, gx

    def __call__(self, x, counter=None):
        return self.forward(x, counter)[0]

    @property
    def cost(self) -> NetCost:
        return NetCost(self.spec)

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def checksum(self) -> str:
        return params_checksum(self.params)


class ConditionedNet(Mlp):
    """MLP conditioned on time, class label and optionally a feature vector.

    The conditioning vector is ``temb(t) + label_emb[c] + feat_proj @ f`` and
    is added to the first pre-activation.  Label ``n_classes`` is the null
    label used for classifier-free guidance.
    """

    def __init__(self, spec: MlpSpec, n_classes: int, feat_dim: int = 0, seed: int = 0, params=None):
        if spec.cond_dim < 2 or spec.cond_dim % 2:
            raise ValueError("conditioned networks need an even cond_dim >= 2")
        self.n_classes = n_classes
        self.feat_dim = feat_dim
        if params is None:
            params = init_params(spec, seed)
            rng = np.random.default_rng([seed, 1])
            params["label_emb"] = rng.normal(0.0, 0.5, size=(n_classes + 1, spec.cond_dim))
            if feat_dim:
                bound = 1.0 / np.sqrt(feat_dim)
                params["feat_proj"] = rng.uniform(-bound, bound, size=(spec.cond_dim, feat_dim))
        super().__init__(spec, seed, params)

    @property
    def null_label(self) -> int:
        return self.n_classes

    def forward(self, x, t, labels, feat=None, counter=None):
        x = np.asarray(x, dtype=np.float64)
        batch = x.shape[0] if x.ndim == 2 else None
        labels = np.asarray(labels)
        if labels.ndim == 0 and batch is not None:
            labels = np.full(batch, int(labels))
        if np.any(labels < 0) or np.any(labels > self.n_classes):
            raise ValueError(f"label outside 0..{self.n_classes}")
        t = np.asarray(t, dtype=np.float64)
        if t.ndim == 0 and batch is not None:
            t = np.full(batch, float(t))
        cond = timestep_embedding(t, self.spec.cond_dim) + self.params["label_emb"][labels]
        if self.feat_dim:
            if feat is None:
                raise ValueError("this network requires a feature input")
            feat = np.asarray(feat, dtype=np.float64)
            if feat.shape[-1] != self.feat_dim:
                raise ValueError(f"feature width {feat.shape[-1]} != {self.feat_dim}")
            cond = cond + feat @ self.params["feat_proj"].T
            if counter is not None:
                rows = feat.shape[0] if feat.ndim == 2 else 1
                counter.add(rows * self.feat_dim * self.spec.cond_dim)
        y, cache = mlp_forward(self.params, x, cond, counter=counter)
        cache["labels"] = labels
        cache["feat"] = feat
        return y, cache

    def backward(self, cache, grad_y):
        """Returns ``(grads, grad_x, grad_feat)``."""
        grads, gx, gcond = mlp_backward(cache, grad_y)
        labels = cache["labels"]
        g_emb = np.zeros_like(self.params["label_emb"])
        if gcond.ndim == 1:
            g_emb[int(labels)] += gcond
        else:
            np.add.at(g_emb, labels, gcond)
        grads["label_emb"] = g_emb
        gfeat = None
        if self.feat_dim:
            feat = cache["feat"]
            if gcond.ndim == 1:
                grads["feat_proj"] = np.outer(gcond, feat)
            else:
                grads["feat_proj"] = gcond.T @ feat
            gfeat = gcond @ self.params["feat_proj"]
        return grads, gx, gfeat

    def __call__(self, x, t, labels, feat=None, counter=None):
        return self.forward(x, t, labels, feat, counter)[0]

    @property
    def cost(self) -> NetCost:
        return NetCost(self.spec, self.feat_dim)


class OracleEncoder(Mlp):
    """Frozen seed-fixed MLP whose output is L2-normalized."""

    def __init__(self, spec: MlpSpec, seed: int, params=None):
        super().__init__(spec, seed, params)
        for p in self.params.values():
            p.setflags(write=False)
        self._checksum = params_checksum(self.params)

    def encode(self, x1, counter=None):
        h = mlp_forward(self.params, x1, counter=counter)[0]
        return h / np.linalg.norm(h, axis=-1, keepdims=True)

    def verify(self):
        if params_checksum(self.params) != self._checksum:
            raise RuntimeError("oracle encoder parameters were modified")


@dataclass(frozen=True)
class Architecture:
    velocity_layers: int = 3
    velocity_hidden: int = 64
    align_layers: int = 4
    align_hidden: int = 64
    proj_hidden: int = 64
    frn_layers: int = 2
    frn_hidden: int = 64
    oracle_hidden: int = 64
    oracle_dim: int = 16
    oracle_seed: int = 1234
    feat_dim: int = 0  # 0 means "same as the data dimension"


@dataclass(frozen=True)
class BundleDims:
    d_x: int
    n_classes: int
    feat_dim: int
    oracle_dim: int


@dataclass(frozen=True)
class GuidanceConfig:
    w: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.w) or self.w < 0:
            raise ValueError(f"guidance scale must be finite and >= 0, got {self.w}")


@dataclass
class ModelBundle:
    schedule: SegmentSchedule
    dims: BundleDims
    arch: Architecture
    velocity_blocks: list[ConditionedNet]
    align_net: ConditionedNet | None = None
    proj_head: Mlp | None = None
    frn: ConditionedNet | None = None
    oracle: OracleEncoder | None = None
    seed: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def M(self) -> int:
        return self.schedule.M

    @property
    def semfeat(self) -> bool:
        return self.align_net is not None

    def networks(self) -> dict[str, Mlp]:
        nets = {f"velocity/{m + 1}": b for m, b in enumerate(self.velocity_blocks)}
        for name in ("align_net", "proj_head", "frn", "oracle"):
            net = getattr(self, name)
            if net is not None:
                nets[name] = net
        return nets

    def n_params(self, *, inference_only: bool = True) -> int:
        skip = {"proj_head", "oracle"} if inference_only else {"oracle"}
        return sum(n.n_params() for k, n in self.networks().items() if k not in skip)


def make_frn(dims: BundleDims, arch: Architecture, seed: int) -> ConditionedNet:
    spec = MlpSpec(dims.d_x, arch.frn_hidden, dims.feat_dim, arch.frn_layers, cond_dim=_cond_width(arch.frn_hidden, arch.frn_layers, dims.feat_dim))
    return ConditionedNet(spec, dims.n_classes, 0, seed=derive_seed(seed, "frn"))


def _cond_width(hidden, n_layers, out_dim):
    return hidden if n_layers > 1 else out_dim


def build_bundle(schedule: SegmentSchedule, d_x: int, n_classes: int, arch: Architecture = Architecture(),
                 *, semfeat: bool = True, with_frn: bool = False, seed: int = 0) -> ModelBundle:
    feat_dim = (arch.feat_dim or d_x) if semfeat else 0
    dims = BundleDims(d_x=d_x, n_classes=n_classes, feat_dim=feat_dim, oracle_dim=arch.oracle_dim)
    vspec = MlpSpec(d_x, arch.velocity_hidden, d_x, arch.velocity_layers,
                    cond_dim=_cond_width(arch.velocity_hidden, arch.velocity_layers, d_x))
    blocks = [
        ConditionedNet(vspec, n_classes, feat_dim, seed=derive_seed(seed, "velocity", m))
        for m in range(schedule.M)
    ]
    bundle = ModelBundle(schedule=schedule, dims=dims, arch=arch, velocity_blocks=blocks, seed=seed)
    if semfeat:
        aspec = MlpSpec(d_x, arch.align_hidden, feat_dim, arch.align_layers,
                        cond_dim=_cond_width(arch.align_hidden, arch.align_layers, feat_dim))
        bundle.align_net = ConditionedNet(aspec, n_classes, 0, seed=derive_seed(seed, "align"))
        bundle.proj_head = Mlp(MlpSpec(feat_dim, arch.proj_hidden, arch.oracle_dim, 3), seed=derive_seed(seed, "proj"))
        bundle.oracle = OracleEncoder(MlpSpec(d_x, arch.oracle_hidden, arch.oracle_dim, 3),
                                      seed=derive_seed(arch.oracle_seed, "oracle"))
    if with_frn:
        bundle.frn = make_frn(dims, arch, seed)
    return bundle


def single_block_bundle(net: ConditionedNet, arch: Architecture = Architecture(), seed: int = 0) -> ModelBundle:
    """Wrap one velocity network covering all of [0, 1) as a bundle."""
    dims = BundleDims(d_x=net.spec.in_dim, n_classes=net.n_classes, feat_dim=0, oracle_dim=arch.oracle_dim)
    return ModelBundle(schedule=SegmentSchedule((0.0, 1.0)), dims=dims, arch=arch, velocity_blocks=[net], seed=seed)


# Functional evaluation API --------------------------------------------------

def _count(ledger, network, pass_, x):
    if ledger is None:
        return None
    rows = x.shape[0] if np.ndim(x) == 2 else 1
    return ledger.counter(network, pass_, rows)


def oracle_encode(bundle: ModelBundle, x1):
    if bundle.oracle is None:
        raise UnsupportedOperationError("bundle has no oracle encoder")
    x1 = np.asarray(x1, dtype=np.float64)
    if x1.shape[-1] != bundle.dims.d_x:
        raise ValueError(f"data width {x1.shape[-1]} != {bundle.dims.d_x}")
    return bundle.oracle.encode(x1)


def align_forward(bundle: ModelBundle, x_t, t, c, *, ledger=None, pass_="cond"):
    if bundle.align_net is None:
        raise UnsupportedOperationError("bundle was built without semantic feature guidance")
    if np.any(np.asarray(t) < 0) or np.any(np.asarray(t) > 1):
        raise ValueError("t outside [0, 1]")
    return bundle.align_net(x_t, t, c, counter=_count(ledger, "align", pass_, np.asarray(x_t)))


def project_feature(bundle: ModelBundle, f_t):
    if bundle.proj_head is None:
        raise UnsupportedOperationError("bundle has no projection head")
    f_t = np.asarray(f_t, dtype=np.float64)
    if not np.all(np.isfinite(f_t)):
        raise ValueError("non-finite feature")
    return bundle.proj_head(f_t)


def velocity_eval(bundle: ModelBundle, m: int, x_t, t: float, c, f_t=None, *, ledger=None, pass_="cond"):
    """Evaluate only block ``m`` (1-based) at scalar time ``t`` inside its segment."""
    if not 1 <= m <= bundle.M:
        raise ValueError(f"segment {m} outside 1..{bundle.M}")
    if segment_index(float(t), bundle.schedule).m != m:
        raise ValueError(f"t={t} is not inside segment {m}")
    block = bundle.velocity_blocks[m - 1]
    return block(x_t, t, c, f_t, counter=_count(ledger, f"velocity/{m}", pass_, np.asarray(x_t)))


def frn_approximate(bundle: ModelBundle, f_start, x_t, t, c, coords: SegmentCoords | float, *,
                    ledger=None, pass_="cond"):
    """``f_start + b * frn(x_t, c)`` with ``b`` the normalized in-segment offset.

    A bundle whose residual network was trained in direct mode
    (``extra["frn_residual"] = False``) returns ``frn(x_t, c)`` unchanged.
    """
    if bundle.frn is None:
        raise UnsupportedOperationError("bundle has no feature residual network")
    b = coords.b if isinstance(coords, SegmentCoords) else float(coords)
    if not 0.0 <= b < 1.0:
        raise ValueError(f"normalized offset {b} outside [0, 1)")
    r = bundle.frn(x_t, t, c, counter=_count(ledger, "frn", pass_, np.asarray(x_t)))
    if not bundle.extra.get("frn_residual", True):
        return r
    return np.asarray(f_start) + b * r


def cfg_combine(v_cond, v_uncond, w: float):
    v_cond = np.asarray(v_cond, dtype=np.float64)
    v_uncond = np.asarray(v_uncond, dtype=np.float64)
    if v_cond.shape != v_uncond.shape:
        raise ValueError(f"dimension mismatch: {v_cond.shape} vs {v_uncond.shape}")
    return v_uncond + w * (v_cond - v_uncond)
