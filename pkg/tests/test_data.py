import json
import struct
import zlib

import numpy as np
import pytest
from scipy.stats import chisquare

from blockflow.data import (
    DatasetFormatError,
    DatasetSpec,
    SampleSet,
    load_dataset,
    make_checkerboard,
    make_dataset,
    make_gaussian_ring,
    make_grf_images,
    ring_centers,
    save_dataset,
)


def test_ring_zero_sigma_hits_centers():
    spec = DatasetSpec(n_samples=200, sigma=0.0, n_classes=5)
    ss = make_gaussian_ring(spec)
    centers = ring_centers(spec).astype(np.float32)
    np.testing.assert_array_equal(ss.x, centers[ss.labels])


def test_ring_class_means():
    spec = DatasetSpec(n_samples=8192, sigma=0.15)
    ss = make_gaussian_ring(spec)
    centers = ring_centers(spec)
    for c in range(spec.n_classes):
        pts = ss.x[ss.labels == c].astype(np.float64)
        err = np.abs(pts.mean(0) - centers[c])
        assert np.all(err < 3 * spec.sigma / np.sqrt(len(pts)) + 1e-6)


def test_checkerboard_cells_and_counts():
    spec = DatasetSpec(kind="checkerboard", n_samples=8000, cells=4, n_classes=8)
    ss = make_checkerboard(spec)
    width = 4.0 / spec.cells
    ij = np.floor((ss.x.astype(np.float64) + 2.0) / width).astype(int)
    ij = np.minimum(ij, spec.cells - 1)
    lo = (-2.0 + ij * width).astype(np.float32)
    hi = (-2.0 + (ij + 1) * width).astype(np.float32)
    assert np.all((ss.x >= lo) & (ss.x <= hi))
    assert np.all(ij.sum(1) % 2 == 0)
    counts = np.bincount(ss.labels, minlength=8)
    assert chisquare(counts).pvalue > 1e-3


def test_grf_white_when_beta_zero():
    ss = make_grf_images(DatasetSpec(kind="grf", n_samples=50, side=8, beta=0.0))
    assert ss.dim == 64 and ss.images().shape == (50, 8, 8)
    np.testing.assert_allclose(ss.images().std(axis=(1, 2)), 1.0, rtol=1e-5)
    with pytest.raises(ValueError):
        make_grf_images(DatasetSpec(kind="grf", n_samples=2, side=12))


def test_spec_validation():
    for kw in ({"kind": "moons"}, {"n_samples": 0}, {"n_classes": 0}, {"radius": 0.0},
               {"sigma": -1.0}, {"cells": 0}, {"beta": -1.0}):
        with pytest.raises(ValueError):
            DatasetSpec(**kw)
    with pytest.raises(ValueError):
        SampleSet(np.full((2, 2), np.nan), np.zeros(2))


@pytest.mark.parametrize("kind", ["ring", "checkerboard", "grf"])
def test_round_trip_and_determinism(tmp_path, kind):
    spec = DatasetSpec(kind=kind, n_samples=300, side=8, seed=11)
    a, b = tmp_path / "a.bfmd", tmp_path / "b.bfmd"
    save_dataset(make_dataset(spec), a)
    save_dataset(make_dataset(spec), b)
    assert a.read_bytes() == b.read_bytes()
    orig = make_dataset(spec)
    back = load_dataset(a)
    assert back.x.tobytes() == orig.x.tobytes()
    assert back.labels.tobytes() == orig.labels.tobytes()
    assert (back.n_classes, back.side, back.spec) == (orig.n_classes, orig.side, orig.spec)


def _write(tmp_path, spec=DatasetSpec(n_samples=20)):
    path = tmp_path / "d.bfmd"
    save_dataset(make_dataset(spec), path)
    return path, bytearray(path.read_bytes())


def _expect_error(path, raw, match):
    path.write_bytes(bytes(raw))
    with pytest.raises(DatasetFormatError, match=match):
        load_dataset(path)


def test_rejects_bad_magic_version_checksum(tmp_path):
    path, raw = _write(tmp_path)
    bad = raw.copy()
    bad[:4] = b"XXXX"
    _expect_error(path, bad, "magic")
    bad = raw.copy()
    bad[4:6] = struct.pack("<H", 9)
    _expect_error(path, bad, "version")
    bad = raw.copy()
    bad[-10] ^= 0xFF
    _expect_error(path, bad, "checksum")
    _expect_error(path, raw[:-7], "checksum")


def test_rejects_wrong_declared_count(tmp_path):
    path, raw = _write(tmp_path)
    hlen = struct.unpack_from("<I", raw, 6)[0]
    header = json.loads(raw[10:10 + hlen])
    header["n"] += 1
    hb = json.dumps(header, sort_keys=True).encode()
    body = struct.pack("<HI", 1, len(hb)) + hb + bytes(raw[10 + hlen:-4])
    forged = b"BFMD" + body + struct.pack("<I", zlib.crc32(body))
    _expect_error(path, forged, "declares 21 records")
