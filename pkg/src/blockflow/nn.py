"""Dense network substrate: SiLU MLPs with exact reverse-mode gradients and AdamW.

Everything works on float64 row-major batches ``(B, features)``.  Weight
matrices are stored ``(out, in)``; a layer computes ``x @ W.T + b``.

A conditioning vector, when the spec declares one, is added to the
pre-activation of the first layer, so ``cond_dim`` must equal that layer's
output width.  Addition costs no multiply-accumulates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import hashlib
import math

import numpy as np

__all__ = [
    "MlpSpec",
    "OptState",
    "TrainingDivergenceError",
    "init_params",
    "mlp_forward",
    "mlp_backward",
    "mlp_macs",
    "adamw_init",
    "adamw_step",
    "timestep_embedding",
    "silu",
    "params_checksum",
]


class TrainingDivergenceError(RuntimeError):
    """Raised when a loss or gradient stops being finite."""


@dataclass(frozen=True)
class MlpSpec:
    in_dim: int
    hidden_dim: int
    out_dim: int
    n_layers: int
    cond_dim: int = 0
    activation: str = "silu"

    def __post_init__(self):
        for name in ("in_dim", "hidden_dim", "out_dim", "n_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"MlpSpec.{name} must be >= 1")
        if self.cond_dim < 0:
            raise ValueError("MlpSpec.cond_dim must be >= 0")
        if self.activation != "silu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.cond_dim and self.cond_dim != self.layer_dims()[0][1]:
            raise ValueError(
                f"cond_dim={self.cond_dim} must match first layer width "
                f"{self.layer_dims()[0][1]}"
            )

    def layer_dims(self) -> list[tuple[int, int]]:
        widths = [self.in_dim] + [self.hidden_dim] * (self.n_layers - 1) + [self.out_dim]
        return list(zip(widths[:-1], widths[1:]))

    def to_dict(self) -> dict:
        return {
            "in_dim": self.in_dim,
            "hidden_dim": self.hidden_dim,
            "out_dim": self.out_dim,
            "n_layers": self.n_layers,
            "cond_dim": self.cond_dim,
            "activation": self.activation,
        }


def mlp_macs(spec: MlpSpec) -> int:
    """Multiply-accumulates for one forward evaluation of one input row."""
    return sum(i * o for i, o in spec.layer_dims())


def init_params(spec: MlpSpec, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    params = {}
    for i, (fan_in, fan_out) in enumerate(spec.layer_dims()):
        bound = 1.0 / math.sqrt(fan_in)
        params[f"W{i}"] = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        params[f"b{i}"] = np.zeros(fan_out)
    return params


def silu(z):
    return z * _sigmoid(z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _n_layers(params) -> int:
    return sum(1 for k in params if k.startswith("W"))


def mlp_forward(params, x, cond=None, *, counter=None):
    """Evaluate the MLP; returns ``(y, cache)``.

    ``x`` may be a single vector or a ``(B, in_dim)`` batch.  ``counter``, if
    given, receives the MAC count of every matrix product via ``counter.add``.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    n = _n_layers(params)
    if h.shape[1] != params["W0"].shape[1]:
        raise ValueError(f"input width {h.shape[1]} != {params['W0'].shape[1]}")
    if not np.all(np.isfinite(h)):
        raise ValueError("non-finite network input")
    if cond is not None:
        cond = np.asarray(cond, dtype=np.float64)
        if cond.ndim == 1:
            cond = np.broadcast_to(cond, (h.shape[0], cond.shape[0]))
        if cond.shape[1] == 0:
            cond = None
        elif cond.shape != (h.shape[0], params["W0"].shape[0]):
            raise ValueError(f"conditioning shape {cond.shape} does not match first layer")

    inputs, preacts = [], []
    for i in range(n):
        W, b = params[f"W{i}"], params[f"b{i}"]
        inputs.append(h)
        z = h @ W.T + b
        if counter is not None:
            counter.add(h.shape[0] * W.shape[0] * W.shape[1])
        if i == 0 and cond is not None:
            z = z + cond
        preacts.append(z)
        h = silu(z) if i < n - 1 else z
    cache = {
        "params": params,
        "inputs": inputs,
        "preacts": preacts,
        "single": single,
        "has_cond": cond is not None,
        "out_shape": h.shape,
    }
    return (h[0] if single else h), cache


def mlp_backward(cache, grad_y):
    """Gradients of ``sum(y * grad_y)``.

    Returns ``(grads, grad_x, grad_cond)``; ``grad_cond`` is ``None`` when the
    forward pass had no conditioning.
    """
    params = cache["params"]
    g = np.asarray(grad_y, dtype=np.float64)
    if cache["single"]:
        g = g[None, :]
    if g.shape != cache["out_shape"]:
        raise ValueError(f"grad_y shape {g.shape} does not match cached output {cache['out_shape']}")
    n = len(cache["inputs"])
    grads = {}
    grad_cond = None
    for i in reversed(range(n)):
        z = cache["preacts"][i]
        if i < n - 1:
            s = _sigmoid(z)
            g = g * (s * (1.0 + z * (1.0 - s)))
        if i == 0 and cache["has_cond"]:
            grad_cond = g
        grads[f"W{i}"] = g.T @ cache["inputs"][i]
        grads[f"b{i}"] = g.sum(axis=0)
        g = g @ params[f"W{i}"]
    if cache["single"]:
        g = g[0]
        if grad_cond is not None:
            grad_cond = grad_cond[0]
    return grads, g, grad_cond


@dataclass
class OptState:
    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.0
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_init(params, lr=1e-4, betas=(0.9, 0.999), weight_decay=0.0, eps=1e-8) -> OptState:
    return OptState(
        lr=lr,
        betas=tuple(betas),
        weight_decay=weight_decay,
        eps=eps,
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
    )


def adamw_step(params, grads, state: OptState):
    """One AdamW update with decoupled weight decay; returns new params and state."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergenceError(f"non-finite gradient for {k!r} at step {state.step + 1}")
    b1, b2 = state.betas
    step = state.step + 1
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            g = np.zeros_like(p)
        elif g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {k!r}")
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * g * g
        p = p * (1.0 - state.lr * state.weight_decay)
        new_p[k] = p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_m[k] = m
        new_v[k] = v
    return new_p, replace(state, step=step, m=new_m, v=new_v)


def timestep_embedding(t, dim: int, max_freq: float = 1000.0):
    """Sinusoidal embedding ``[sin(t w_k), cos(t w_k)]`` with ``w_k = max_freq**(k/half)``."""
    if dim < 2 or dim % 2:
        raise ValueError(f"embedding dim must be a positive even integer, got {dim}")
    half = dim // 2
    freqs = max_freq ** (np.arange(half) / half)
    t = np.asarray(t, dtype=np.float64)
    args = t[..., None] * freqs
    return np.concatenate([np.sin(args), np.cos(args)], axis=-1)


def params_checksum(params: dict) -> str:
    h = hashlib.sha256()
    for k in sorted(params):
        h.update(k.encode())
        h.update(np.ascontiguousarray(params[k], dtype="<f8").tobytes())
    return h.hexdigest()
