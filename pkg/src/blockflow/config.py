"""Flat ``section.key = value`` run configuration.

Lines starting with ``#`` and blank lines are ignored.  Each section maps to
one dataclass; a key's type is taken from its default value.  Lists are
comma separated.
"""

from __future__ import annotations

from dataclasses import MISSING, dataclass, field, fields, replace
import os

from .data import DatasetSpec
from .inference import SamplerConfig
from .models import Architecture, GuidanceConfig
from .training import TrainConfig

__all__ = ["ConfigError", "RunOptions", "AnalysisOptions", "RunConfig", "parse_config", "parse_text", "dump_config",
           "with_overrides", "SampleOptions", "TrainOptions"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunOptions:
    id: str = "run"
    out_dir: str = "runs"
    threads: int = 1

    def __post_init__(self):
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if not self.id or any(c in self.id for c in "/\\"):
            raise ValueError("id must be a non-empty name without path separators")


@dataclass(frozen=True)
class AnalysisOptions:
    timesteps: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    threshold: float = 0.5
    n_images: int = 100
    pca_k: int = 2
    n_projections: int = 128
    mmd_bandwidth: float = 1.0
    feature_samples: int = 50
    feature_grid: int = 8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if any(not 0.0 <= t <= 1.0 for t in self.timesteps):
            raise ValueError("timesteps must lie in [0, 1]")
        for name in ("n_images", "pca_k", "n_projections", "feature_samples", "feature_grid"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.mmd_bandwidth <= 0:
            raise ValueError("mmd_bandwidth must be > 0")


@dataclass(frozen=True)
class SampleOptions:
    steps_per_segment: int = 41
    guidance: float = 1.0
    mode: str = "full"
    n_samples: int = 1000
    seed: int = 0
    chunk_size: int = 256

    def sampler(self) -> SamplerConfig:
        return SamplerConfig(self.steps_per_segment, GuidanceConfig(self.guidance), self.mode,
                             self.n_samples, self.seed, self.chunk_size)

    def __post_init__(self):
        self.sampler()


@dataclass(frozen=True)
class TrainOptions:
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
    log_every: int = 1
    checkpoint_every: int = 0


_SECTIONS = {
    "run": RunOptions,
    "data": DatasetSpec,
    "train": TrainOptions,
    "arch": Architecture,
    "sample": SampleOptions,
    "analysis": AnalysisOptions,
}


@dataclass(frozen=True)
class RunConfig:
    run: RunOptions = field(default_factory=RunOptions)
    data: DatasetSpec = field(default_factory=DatasetSpec)
    train: TrainOptions = field(default_factory=TrainOptions)
    arch: Architecture = field(default_factory=Architecture)
    sample: SampleOptions = field(default_factory=SampleOptions)
    analysis: AnalysisOptions = field(default_factory=AnalysisOptions)

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(batch_size=t.batch_size, iterations=t.iterations, lam=t.lam, lr=t.lr,
                           weight_decay=t.weight_decay, seed=t.seed, segments=t.segments,
                           label_drop_prob=t.label_drop_prob, semfeat=t.semfeat,
                           frn_iterations=t.frn_iterations, frn_residual=t.frn_residual, arch=self.arch)

    def out_path(self, *parts) -> str:
        return os.path.join(self.run.out_dir, self.run.id, *parts)


def _defaults(cls):
    return {f.name: (f.default if f.default_factory is MISSING else f.default_factory()) for f in fields(cls)}


def _coerce(key: str, raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    if isinstance(default, tuple):
        items = [s for s in (p.strip() for p in raw.split(",")) if s]
        try:
            return tuple(float(s) for s in items)
        except ValueError:
            raise ConfigError(f"{key}: expected a comma-separated list of numbers, got {raw!r}") from None
    return raw


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_text(text: str, overrides: dict[str, str] | None = None, source: str = "<config>") -> RunConfig:
    """Parse config text; ``overrides`` (``"section.key" -> raw value``) win over the text."""
    values: dict[str, dict] = {s: {} for s in _SECTIONS}
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value', got {line.strip()!r}")
        key, raw = (s.strip() for s in stripped.split("=", 1))
        entries.append((key, raw, f"{source}:{lineno}"))
    for key, raw in (overrides or {}).items():
        entries.append((key, raw, "override"))

    for key, raw, where in entries:
        if "." not in key:
            raise ConfigError(f"{where}: key {key!r} must be written as section.key")
        section, name = key.split(".", 1)
        if section not in _SECTIONS:
            raise ConfigError(f"{where}: unknown section in key {key!r}")
        defaults = _defaults(_SECTIONS[section])
        if name not in defaults:
            raise ConfigError(f"{where}: unknown key {key!r}")
        values[section][name] = _coerce(key, raw, defaults[name])

    built = {}
    for section, cls in _SECTIONS.items():
        try:
            built[section] = cls(**values[section])
        except ValueError as exc:
            keys = ", ".join(f"{section}.{k}" for k in values[section]) or f"{section}.*"
            raise ConfigError(f"{section}: {exc} (keys: {keys})") from None
    cfg = RunConfig(**built)
    if cfg.train.segments < 1:
        raise ConfigError(f"train.segments: must be >= 1, got {cfg.train.segments}")
    if cfg.train.batch_size % cfg.train.segments:
        raise ConfigError(
            f"train.batch_size: {cfg.train.batch_size} is not divisible by train.segments={cfg.train.segments}"
        )
    try:
        cfg.train_config()
    except ValueError as exc:
        raise ConfigError(f"train: {exc}") from None
    return cfg


def parse_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    if path is None:
        return parse_text("", overrides)
    if not os.path.exists(path):
        raise ConfigError(f"config file {path!r} does not exist")
    with open(path, encoding="utf-8") as fh:
        return parse_text(fh.read(), overrides, source=str(path))


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        for f in fields(obj):
            lines.append(f"{section}.{f.name} = {_format(getattr(obj, f.name))}")
        lines.append("")
    return "\n".join(lines)


def with_overrides(cfg: RunConfig, **sections) -> RunConfig:
    """Return ``cfg`` with whole-section keyword replacements, e.g. ``train={"iterations": 10}``."""
    return replace(cfg, **{s: replace(getattr(cfg, s), **kw) for s, kw in sections.items()})
