"""Multiply-accumulate accounting for sampling runs.

MACs are used as the FLOP unit.  The instrumented :class:`FlopsLedger` is
filled by the networks as they run; :func:`analytic_flops` predicts the same
numbers in closed form from layer shapes and the sampler's call structure.
The two must agree exactly.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

from .nn import MlpSpec, mlp_macs

__all__ = ["FlopsLedger", "NetCost", "analytic_flops", "per_step_ratio"]


class _Counter:
    __slots__ = ("ledger", "key")

    def __init__(self, ledger, key):
        self.ledger = ledger
        self.key = key

    def add(self, n):
        self.ledger._add(self.key, int(n))


class FlopsLedger:
    """Instrumented MAC counts, keyed by ``(network, pass)``.

    ``network`` is ``"velocity/<m>"``, ``"align"``, ``"frn"``, ``"proj"`` or
    ``"oracle"``; ``pass`` is ``"cond"`` or ``"uncond"`` (the null-label pass
    of classifier-free guidance).
    """

    def __init__(self, n_samples: int = 1):
        self.n_samples = n_samples
        self.macs = defaultdict(int)
        self.evals = defaultdict(int)
        self.step_macs: list[int] = []
        self._step = None

    def counter(self, network: str, pass_: str = "cond", rows: int = 1) -> _Counter:
        self.evals[(network, pass_)] += int(rows)
        return _Counter(self, (network, pass_))

    def begin_step(self, index: int | None = None):
        """Attribute subsequent MACs to solver step ``index`` (default: a new step)."""
        if index is None:
            index = len(self.step_macs)
        if index >= len(self.step_macs):
            self.step_macs.extend([0] * (index + 1 - len(self.step_macs)))
        self._step = index

    def merge(self, other: "FlopsLedger") -> "FlopsLedger":
        """Fold another ledger's counts (e.g. from another sample chunk) into this one."""
        for k, v in other.macs.items():
            self.macs[k] += v
        for k, v in other.evals.items():
            self.evals[k] += v
        if len(other.step_macs) > len(self.step_macs):
            self.step_macs.extend([0] * (len(other.step_macs) - len(self.step_macs)))
        for i, v in enumerate(other.step_macs):
            self.step_macs[i] += v
        return self

    def _add(self, key, n):
        self.macs[key] += n
        if self._step is not None:
            self.step_macs[self._step] += n

    # Aggregates -------------------------------------------------------------

    @staticmethod
    def _family(network):
        return network.split("/")[0]

    def total(self, *, include_uncond: bool = True) -> int:
        return sum(v for (net, p), v in self.macs.items() if include_uncond or p == "cond")

    def by_network(self, pass_: str | None = None) -> dict[str, int]:
        out = defaultdict(int)
        for (net, p), v in self.macs.items():
            if pass_ is None or p == pass_:
                out[self._family(net)] += v
        return dict(out)

    def evals_per_sample(self, network: str, pass_: str = "cond") -> float:
        rows = sum(v for (net, p), v in self.evals.items()
                   if p == pass_ and (net == network or self._family(net) == network))
        return rows / self.n_samples

    def blocks_touched(self) -> set[str]:
        return {net for (net, _p), v in self.macs.items() if net.startswith("velocity/") and v}

    @property
    def n_steps(self) -> int:
        return len(self.step_macs)

    def gflops_per_step(self, *, include_uncond: bool = True) -> float:
        """Per-sample GMACs averaged over solver steps."""
        if not self.n_steps:
            return 0.0
        return self.total(include_uncond=include_uncond) / (self.n_samples * self.n_steps) / 1e9

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "n_steps": self.n_steps,
            "total_macs": self.total(),
            "total_macs_cond_only": self.total(include_uncond=False),
            "macs_by_network": self.by_network(),
            "macs_by_network_cond_only": self.by_network("cond"),
            "per_step_macs": list(self.step_macs),
            "gflops_per_step": self.gflops_per_step(),
            "gflops_per_step_cond_only": self.gflops_per_step(include_uncond=False),
            "evals": {f"{n}:{p}": v for (n, p), v in sorted(self.evals.items())},
        }


@dataclass(frozen=True)
class NetCost:
    """Per-row MAC cost of one network evaluation."""

    mlp: MlpSpec
    feat_dim: int = 0

    @property
    def macs(self) -> int:
        # Feature projection into the first-layer conditioning width.
        proj = self.feat_dim * self.mlp.layer_dims()[0][1] if self.feat_dim else 0
        return mlp_macs(self.mlp) + proj


def analytic_flops(velocity: NetCost, *, M: int, K: int, n_samples: int = 1,
                   align: NetCost | None = None, frn: NetCost | None = None,
                   mode: str = "full", guided: bool = False) -> dict:
    """Closed-form MAC totals for a sampling run.

    ``mode="full"`` evaluates the alignment network at every step; ``"frn"``
    evaluates it once per segment and the residual network on the remaining
    ``K - 1`` steps.  ``guided`` doubles every evaluation for the null-label
    pass.
    """
    if mode not in ("full", "frn"):
        raise ValueError(f"unknown sampler mode {mode!r}")
    if mode == "frn" and (frn is None or align is None):
        raise ValueError("residual mode needs both alignment and residual networks")
    passes = 2 if guided else 1
    v = velocity.macs
    a = align.macs if align is not None else 0
    r = frn.macs if frn is not None else 0
    per_step = []
    for _m in range(M):
        for k in range(K):
            if mode == "full":
                cost = v + a
            else:
                cost = v + (a if k == 0 else r)
            per_step.append(cost * passes * n_samples)
    by_net = {"velocity": v * M * K * passes * n_samples}
    if align is not None:
        n_align = M * K if mode == "full" else M
        by_net["align"] = a * n_align * passes * n_samples
    if mode == "frn" and K > 1:
        by_net["frn"] = r * M * (K - 1) * passes * n_samples
    total = sum(per_step)
    return {
        "n_samples": n_samples,
        "n_steps": M * K,
        "total_macs": total,
        "total_macs_cond_only": total // passes,
        "macs_by_network": by_net,
        "per_step_macs": per_step,
        "gflops_per_step": total / (n_samples * M * K) / 1e9,
        "gflops_per_step_cond_only": total / passes / (n_samples * M * K) / 1e9,
    }


def per_step_ratio(numerator: NetCost, denominator: NetCost) -> float:
    return numerator.macs / denominator.macs
