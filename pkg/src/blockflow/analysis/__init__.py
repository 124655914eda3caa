from .curves import discrete_frechet, frechet_curve_distance
from .pca import PCAResult, pca_top_k
from .spectral import (
    PowerSpectrum2D,
    RadialProfile,
    SpectralReport,
    azimuthal_integrate,
    fft,
    fft2,
    high_freq_ratio,
    ifft,
    ifft2,
    mean_power_spectrum,
    mean_radial_profile,
    noise_sweep_report,
    power_spectrum_2d,
    spectral_entropy,
)

__all__ = [
    "discrete_frechet",
    "frechet_curve_distance",
    "PCAResult",
    "pca_top_k",
    "PowerSpectrum2D",
    "RadialProfile",
    "SpectralReport",
    "azimuthal_integrate",
    "fft",
    "fft2",
    "high_freq_ratio",
    "ifft",
    "ifft2",
    "mean_power_spectrum",
    "mean_radial_profile",
    "noise_sweep_report",
    "power_spectrum_2d",
    "spectral_entropy",
]
