"""Radix-2 FFT, 2D power spectra and spectral statistics of square images."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "fft",
    "ifft",
    "fft2",
    "ifft2",
    "PowerSpectrum2D",
    "RadialProfile",
    "SpectralReport",
    "power_spectrum_2d",
    "mean_power_spectrum",
    "azimuthal_integrate",
    "mean_radial_profile",
    "spectral_entropy",
    "high_freq_ratio",
    "noise_sweep_report",
]


def _is_pow2(n: int) -> bool:
    return n >= 1 and not n & (n - 1)


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft(x) -> np.ndarray:
    """Iterative radix-2 DFT along the last axis (unnormalized, ``exp(-2 pi i k n / N)``)."""
    a = np.asarray(x, dtype=np.complex128)
    n = a.shape[-1]
    if not _is_pow2(n):
        raise ValueError(f"FFT length must be a power of two, got {n}")
    lead = a.shape[:-1]
    a = a[..., _bit_reverse(n)]
    size = 2
    while size <= n:
        half = size // 2
        w = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = a.reshape(*lead, n // size, size)
        even = blocks[..., :half]
        odd = blocks[..., half:] * w
        a = np.concatenate([even + odd, even - odd], axis=-1).reshape(*lead, n)
        size *= 2
    return a


def ifft(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128)
    return np.conj(fft(np.conj(x))) / x.shape[-1]


def fft2(x) -> np.ndarray:
    """2D DFT over the last two axes."""
    return np.swapaxes(fft(np.swapaxes(fft(x), -1, -2)), -1, -2)


def ifft2(x) -> np.ndarray:
    return np.swapaxes(ifft(np.swapaxes(ifft(x), -1, -2)), -1, -2)


def _radius_grid(n: int) -> np.ndarray:
    k = np.arange(n) - n // 2
    return np.hypot(k[:, None], k[None, :])


@dataclass(frozen=True)
class PowerSpectrum2D:
    """Centered power grid (DC at ``[N//2, N//2]``) normalized so it sums to the image energy."""

    power: np.ndarray

    @property
    def side(self) -> int:
        return self.power.shape[0]

    @property
    def total(self) -> float:
        return float(self.power.sum())

    def radius(self) -> np.ndarray:
        return _radius_grid(self.side)


@dataclass(frozen=True)
class RadialProfile:
    power: np.ndarray
    counts: np.ndarray

    @property
    def freq(self) -> np.ndarray:
        """Normalized radial frequency, Nyquist = 1."""
        n_bins = len(self.power)
        return np.arange(n_bins) / (n_bins - 1) if n_bins > 1 else np.zeros(1)


@dataclass(frozen=True)
class SpectralReport:
    t: float
    se: float
    hfr: float


def _check_image(image) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] != img.shape[1]:
        raise ValueError(f"expected a square 2D image, got shape {img.shape}")
    if img.shape[0] < 2 or not _is_pow2(img.shape[0]):
        raise ValueError(f"image side must be a power of two >= 2, got {img.shape[0]}")
    return img


def power_spectrum_2d(image) -> PowerSpectrum2D:
    img = _check_image(image)
    n = img.shape[0]
    F = np.fft.fftshift(fft2(img))
    return PowerSpectrum2D(np.abs(F) ** 2 / (n * n))


def mean_power_spectrum(images) -> PowerSpectrum2D:
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3 or len(images) == 0:
        raise ValueError("expected a non-empty stack of images")
    _check_image(images[0])
    n = images.shape[-1]
    F = np.fft.fftshift(fft2(images), axes=(-2, -1))
    return PowerSpectrum2D(np.mean(np.abs(F) ** 2, axis=0) / (n * n))


def azimuthal_integrate(ps: PowerSpectrum2D) -> RadialProfile:
    """Mean power per integer-rounded radius; corner radii beyond N/2 fold into the last bin."""
    n = ps.side
    last = n // 2
    bins = np.minimum(np.rint(ps.radius()).astype(np.int64), last).ravel()
    counts = np.bincount(bins, minlength=last + 1)
    sums = np.bincount(bins, weights=ps.power.ravel(), minlength=last + 1)
    return RadialProfile(sums / counts, counts)


def mean_radial_profile(images) -> RadialProfile:
    return azimuthal_integrate(mean_power_spectrum(images))


def _normalized(ps: PowerSpectrum2D) -> np.ndarray:
    total = ps.total
    if not total > 0:
        raise ValueError("spectrum has no power")
    return ps.power / total


def spectral_entropy(ps: PowerSpectrum2D) -> float:
    """Shannon entropy (nats) of the normalized 2D power distribution, DC included."""
    p = _normalized(ps).ravel()
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def high_freq_ratio(ps: PowerSpectrum2D, threshold: float = 0.5) -> float:
    """Fraction of power at normalized radial frequency strictly above ``threshold``."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    p = _normalized(ps)
    r = ps.radius() / (ps.side / 2)
    return float(np.clip(p[r > threshold].sum(), 0.0, 1.0))


def noise_sweep_report(images, timesteps, seed: int = 0, threshold: float = 0.5) -> list[SpectralReport]:
    """Average SE and HFR of ``t * x1 + (1 - t) * eps`` over images, per timestep."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3 or len(images) == 0:
        raise ValueError("expected a non-empty stack of images")
    _check_image(images[0])
    eps = np.random.default_rng(seed).standard_normal(images.shape)
    n = images.shape[-1]
    r = _radius_grid(n) / (n / 2)
    out = []
    for t in timesteps:
        x_t = t * images + (1.0 - t) * eps
        power = np.abs(np.fft.fftshift(fft2(x_t), axes=(-2, -1))) ** 2
        p = power / power.sum(axis=(-2, -1), keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            ent = -np.where(p > 0, p * np.log(p), 0.0).sum(axis=(-2, -1))
        hfr = p[:, r > threshold].sum(axis=-1)
        out.append(SpectralReport(float(t), float(ent.mean()), float(hfr.mean())))
    return out
