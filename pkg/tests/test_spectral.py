import numpy as np
import pytest

from blockflow.analysis.spectral import (
    azimuthal_integrate,
    fft,
    fft2,
    high_freq_ratio,
    ifft2,
    mean_power_spectrum,
    mean_radial_profile,
    noise_sweep_report,
    power_spectrum_2d,
    spectral_entropy,
)
from blockflow.data import DatasetSpec, make_grf_images


def test_fft_matches_numpy():
    rng = np.random.default_rng(0)
    for n in (1, 2, 4, 8, 32, 64):
        x = rng.normal(size=(3, n)) + 1j * rng.normal(size=(3, n))
        np.testing.assert_allclose(fft(x), np.fft.fft(x), atol=1e-10)
    img = rng.normal(size=(16, 16))
    np.testing.assert_allclose(fft2(img), np.fft.fft2(img), atol=1e-10)
    np.testing.assert_allclose(ifft2(fft2(img)).real, img, atol=1e-12)
    with pytest.raises(ValueError):
        fft(np.ones(6))


def test_parseval():
    rng = np.random.default_rng(1)
    for n in (2, 8, 16, 32):
        img = rng.normal(size=(n, n)) * rng.uniform(0.1, 10)
        ps = power_spectrum_2d(img)
        assert abs(ps.total - np.sum(img**2)) / np.sum(img**2) < 1e-9
        assert np.all(ps.power >= 0)


def test_bad_shapes():
    for bad in (np.ones((4, 8)), np.ones((6, 6)), np.ones((1, 1)), np.ones(4)):
        with pytest.raises(ValueError):
            power_spectrum_2d(bad)
    with pytest.raises(ValueError):
        spectral_entropy(power_spectrum_2d(np.zeros((4, 4))))
    with pytest.raises(ValueError):
        noise_sweep_report(np.zeros((0, 4, 4)), [0.5])


def test_constant_image():
    ps = power_spectrum_2d(np.full((8, 8), 3.0))
    assert ps.power[4, 4] == pytest.approx(ps.total)
    assert spectral_entropy(ps) == 0.0
    assert high_freq_ratio(ps) == 0.0
    prof = azimuthal_integrate(ps)
    assert prof.power[0] > 0 and np.all(prof.power[1:] == 0)


def test_cosine_concentrates_in_conjugate_bins():
    n = 16
    y, x = np.mgrid[0:n, 0:n]
    img = np.cos(2 * np.pi * (3 * x + 1 * y) / n)
    ps = power_spectrum_2d(img)
    top = np.argsort(ps.power.ravel())[-2:]
    assert ps.power.ravel()[top].sum() == pytest.approx(ps.total, rel=1e-12)
    nyq = np.cos(np.pi * y).astype(float)
    assert high_freq_ratio(power_spectrum_2d(nyq)) == pytest.approx(1.0)


def test_profile_partitions_power():
    rng = np.random.default_rng(2)
    ps = power_spectrum_2d(rng.normal(size=(16, 16)))
    prof = azimuthal_integrate(ps)
    assert len(prof.power) == 9
    assert np.all(prof.counts > 0)
    assert np.sum(prof.power * prof.counts) == pytest.approx(ps.total, rel=1e-12)
    assert prof.freq[0] == 0 and prof.freq[-1] == 1


def test_scale_invariance_and_bounds():
    rng = np.random.default_rng(3)
    img = rng.normal(size=(8, 8))
    ps = power_spectrum_2d(img)
    se = spectral_entropy(ps)
    assert spectral_entropy(power_spectrum_2d(-7.5 * img)) == pytest.approx(se, abs=1e-12)
    assert 0 <= se <= np.log(64)
    ths = np.linspace(0.0, 0.99, 25)
    h = [high_freq_ratio(ps, th) for th in ths]
    assert all(0 <= v <= 1 for v in h)
    assert all(a >= b for a, b in zip(h, h[1:]))
    dc_share = ps.power[4, 4] / ps.total
    assert h[0] == pytest.approx(1 - dc_share)


def test_white_noise_statistics(oracles):
    wn = oracles["white_noise"]
    n = wn["side"]
    imgs = np.random.default_rng(9).standard_normal((1000, n, n))
    ens = spectral_entropy(mean_power_spectrum(imgs))
    assert abs(ens - wn["ln_bins"]) / wn["ln_bins"] < 0.05
    per_image = np.mean([spectral_entropy(power_spectrum_2d(im)) for im in imgs])
    # A single periodogram is exponentially distributed per bin, which lowers its entropy.
    assert per_image == pytest.approx(wn["per_image_se"], rel=0.01)
    assert per_image == pytest.approx(np.log(n * n) - (1 - np.euler_gamma), rel=0.01)
    hfr = np.mean([high_freq_ratio(power_spectrum_2d(im)) for im in imgs])
    assert abs(hfr - wn["hfr_bin_census"]) / wn["hfr_bin_census"] < 0.05
    prof = mean_radial_profile(imgs).power
    assert np.std(prof) / np.mean(prof) < 0.10


def test_grf_slope_and_sweep():
    spec = DatasetSpec(kind="grf", n_samples=1000, side=16, beta=2.0, seed=4)
    imgs = make_grf_images(spec).images()
    prof = mean_radial_profile(imgs).power
    r = np.arange(1, 8)
    slope = np.polyfit(np.log(r), np.log(prof[1:8]), 1)[0]
    assert abs(slope + 2.0) / 2.0 < 0.15
    rep = noise_sweep_report(imgs[:200], [0.0, 0.5, 1.0], seed=0)
    assert rep[0].se > rep[-1].se
    assert rep[0].hfr > rep[-1].hfr
    clean = np.mean([spectral_entropy(power_spectrum_2d(im)) for im in imgs[:200]])
    assert rep[-1].se == pytest.approx(clean, rel=1e-10)
