"""Synthetic datasets and the ``BFMD`` dataset file format.

File layout (all little-endian)::

    b"BFMD"  u16 version  u32 header_len  header (UTF-8 JSON)
    n records of (dim x f32, i32 label)
    u32 CRC32 of every byte between the magic and the trailer

The JSON header carries ``spec``, ``n``, ``dim``, ``side`` (0 for point data),
``n_classes`` and ``checksum`` (always ``"crc32"``).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
import json
import os
import struct
import zlib

import numpy as np

from .analysis.spectral import fft2, ifft2

__all__ = [
    "DatasetSpec",
    "SampleSet",
    "DatasetFormatError",
    "make_gaussian_ring",
    "make_checkerboard",
    "make_grf_images",
    "make_dataset",
    "save_dataset",
    "load_dataset",
]

MAGIC = b"BFMD"
VERSION = 1


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "ring"
    n_samples: int = 8192
    n_classes: int = 8
    radius: float = 3.0
    sigma: float = 0.15
    cells: int = 4
    side: int = 16
    beta: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("ring", "checkerboard", "grf"):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        if self.radius <= 0 or self.sigma < 0:
            raise ValueError("ring radius must be > 0 and sigma >= 0")
        if self.cells < 1:
            raise ValueError("cells must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")


@dataclass
class SampleSet:
    """``n`` float32 vectors with integer labels; images are flattened ``side x side``."""

    x: np.ndarray
    labels: np.ndarray
    n_classes: int = 1
    side: int = 0
    spec: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int32)
        if self.x.ndim != 2 or self.labels.shape != (self.x.shape[0],):
            raise ValueError("x must be (n, dim) with one label per row")
        if not np.all(np.isfinite(self.x)):
            raise ValueError("non-finite sample values")

    def __len__(self):
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def images(self) -> np.ndarray:
        if not self.side:
            raise ValueError("this sample set does not hold images")
        return self.x.reshape(-1, self.side, self.side).astype(np.float64)

    def subset(self, idx) -> "SampleSet":
        return SampleSet(self.x[idx], self.labels[idx], self.n_classes, self.side, self.spec)


def make_gaussian_ring(spec: DatasetSpec) -> SampleSet:
    rng = np.random.default_rng(spec.seed)
    labels = rng.integers(0, spec.n_classes, size=spec.n_samples)
    angles = 2.0 * np.pi * labels / spec.n_classes
    centers = spec.radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    x = centers + spec.sigma * rng.standard_normal((spec.n_samples, 2))
    return SampleSet(x, labels, spec.n_classes, 0, asdict(spec))


def ring_centers(spec: DatasetSpec) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(spec.n_classes) / spec.n_classes
    return spec.radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def make_checkerboard(spec: DatasetSpec) -> SampleSet:
    """Uniform points on the dark cells of a ``cells x cells`` board over [-2, 2]^2.

    The label is the index of the occupied cell among the dark cells, folded
    modulo ``n_classes``.
    """
    rng = np.random.default_rng(spec.seed)
    k = spec.cells
    dark = [(i, j) for i in range(k) for j in range(k) if (i + j) % 2 == 0]
    cell = rng.integers(0, len(dark), size=spec.n_samples)
    ij = np.array(dark)[cell]
    width = 4.0 / k
    offsets = rng.random((spec.n_samples, 2))
    x = -2.0 + (ij + offsets) * width
    return SampleSet(x, cell % spec.n_classes, spec.n_classes, 0, asdict(spec))


def _check_side(n):
    if n < 2 or n & (n - 1):
        raise ValueError(f"image side must be a power of two >= 2, got {n}")


def make_grf_images(spec: DatasetSpec) -> SampleSet:
    """Gaussian random fields with expected radial power proportional to ``r**-beta``.

    White noise is filtered in the frequency domain by ``r**(-beta/2)``; the
    filter is symmetric under ``k -> -k`` so the result is real.  The DC
    component is removed and every image is scaled to unit variance.
    """
    n = spec.side
    _check_side(n)
    rng = np.random.default_rng(spec.seed)
    k = np.fft.fftfreq(n) * n
    r = np.hypot(k[:, None], k[None, :])
    amp = np.zeros_like(r)
    amp[r > 0] = r[r > 0] ** (-spec.beta / 2.0)
    noise = rng.standard_normal((spec.n_samples, n, n))
    fields = ifft2(fft2(noise) * amp).real
    fields -= fields.mean(axis=(1, 2), keepdims=True)
    fields /= fields.std(axis=(1, 2), keepdims=True)
    labels = np.zeros(spec.n_samples, dtype=np.int32)
    return SampleSet(fields.reshape(spec.n_samples, n * n), labels, 1, n, asdict(spec))


def make_dataset(spec: DatasetSpec) -> SampleSet:
    return {"ring": make_gaussian_ring, "checkerboard": make_checkerboard,
            "grf": make_grf_images}[spec.kind](spec)


def _record_dtype(dim):
    return np.dtype([("x", "<f4", (dim,)), ("label", "<i4")])


def save_dataset(ss: SampleSet, path) -> None:
    header = json.dumps({
        "spec": ss.spec,
        "n": len(ss),
        "dim": ss.dim,
        "side": ss.side,
        "n_classes": ss.n_classes,
        "checksum": "crc32",
    }, sort_keys=True).encode()
    rec = np.empty(len(ss), dtype=_record_dtype(ss.dim))
    rec["x"] = ss.x
    rec["label"] = ss.labels
    body = struct.pack("<HI", VERSION, len(header)) + header + rec.tobytes()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC + body + struct.pack("<I", zlib.crc32(body)))
    os.replace(tmp, path)


def load_dataset(path) -> SampleSet:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 14 or raw[:4] != MAGIC:
        raise DatasetFormatError(f"{path}: not a BFMD dataset file (bad magic)")
    version, hlen = struct.unpack_from("<HI", raw, 4)
    if version != VERSION:
        raise DatasetFormatError(f"{path}: unsupported dataset format version {version}")
    body = raw[4:-4]
    if len(raw) < 10 + hlen + 4:
        raise DatasetFormatError(f"{path}: truncated header")
    (crc,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise DatasetFormatError(f"{path}: checksum mismatch (corrupt or truncated file)")
    try:
        header = json.loads(raw[10:10 + hlen])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DatasetFormatError(f"{path}: unreadable header") from exc
    if header.get("checksum") != "crc32":
        raise DatasetFormatError(f"{path}: unknown checksum algorithm {header.get('checksum')!r}")
    dt = _record_dtype(header["dim"])
    payload = raw[10 + hlen:-4]
    if len(payload) != header["n"] * dt.itemsize:
        raise DatasetFormatError(
            f"{path}: header declares {header['n']} records but payload holds "
            f"{len(payload) / dt.itemsize:g}"
        )
    rec = np.frombuffer(payload, dtype=dt)
    return SampleSet(rec["x"].copy(), rec["label"].copy(), header["n_classes"], header["side"], header["spec"])
