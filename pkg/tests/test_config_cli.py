import csv
import json

import numpy as np
import pytest

from blockflow.cli import EVAL_FIELDS, METRICS_FIELDS, main
from blockflow.config import ConfigError, RunConfig, dump_config, parse_config, parse_text
from blockflow.data import load_dataset


def test_defaults():
    cfg = parse_text("")
    assert cfg == RunConfig()
    assert cfg.train.batch_size == 864 and cfg.train.segments == 6
    assert cfg.sample.steps_per_segment == 41 and cfg.sample.mode == "full"
    tc = cfg.train_config()
    assert tc.lam == 0.5 and tc.lr == 1e-4


def test_parse_and_errors(tmp_path):
    cfg = parse_text("# comment\ntrain.segments = 4\ntrain.batch_size = 8\nanalysis.timesteps = 0, 0.5, 1\n"
                     "train.semfeat = false\n")
    assert cfg.train.segments == 4 and not cfg.train.semfeat
    assert cfg.analysis.timesteps == (0.0, 0.5, 1.0)
    with pytest.raises(ConfigError, match="train.batch_size: 10 is not divisible by train.segments=4"):
        parse_text("train.batch_size = 10\ntrain.segments = 4")
    with pytest.raises(ConfigError, match=r"<config>:2: unknown key 'train.batchsize'"):
        parse_text("\ntrain.batchsize = 8")
    with pytest.raises(ConfigError, match="unknown section"):
        parse_text("trian.lr = 1")
    with pytest.raises(ConfigError, match="train.lr: expected a number"):
        parse_text("train.lr = fast")
    with pytest.raises(ConfigError, match="train.iterations: expected an integer"):
        parse_text("train.iterations = 2.5")
    with pytest.raises(ConfigError, match="sample"):
        parse_text("sample.mode = heun")
    with pytest.raises(ConfigError, match="does not exist"):
        parse_config(tmp_path / "missing.cfg")


def test_overrides_and_dump_round_trip(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("train.lr = 0.01\nrun.id = a\n")
    cfg = parse_config(path, {"run.id": "b", "sample.guidance": "4"})
    assert cfg.train.lr == 0.01 and cfg.run.id == "b" and cfg.sample.guidance == 4.0
    assert parse_text(dump_config(cfg)) == cfg


def _run(tmp_path, *argv):
    return main([*argv, "--out-dir", str(tmp_path), "--run-id", "t",
                 "--set", "train.iterations=6", "--set", "train.batch_size=32", "--set", "train.segments=2",
                 "--set", "train.frn_iterations=5", "--set", "data.n_samples=256",
                 "--set", "arch.velocity_hidden=8", "--set", "arch.align_hidden=8", "--set", "arch.frn_hidden=8"])


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_cli_train_sample_eval(tmp_path, capsys):
    run = tmp_path / "t"
    assert _run(tmp_path, "gen-data") == 0
    assert len(load_dataset(run / "data.bfmd")) == 256
    assert _run(tmp_path, "train") == 0
    rows = _read_csv(run / "metrics.csv")
    assert tuple(rows[0]) == METRICS_FIELDS and len(rows) == 6
    assert rows[0]["loss_frn"] == ""
    assert (run / "losses.png").stat().st_size > 0

    assert _run(tmp_path, "sample", "--mode", "frn", "--n", "10") == 2
    assert "train-frn" in capsys.readouterr().err

    assert _run(tmp_path, "train-frn") == 0
    for mode in ("full", "frn"):
        assert _run(tmp_path, "sample", "--mode", mode, "--n", "40", "--steps", "3") == 0
        s = load_dataset(run / f"samples_{mode}.bfmd")
        assert s.x.shape == (40, 2) and np.all(np.isfinite(s.x))
        fl = json.loads((run / f"flops_{mode}.json").read_text())
        assert fl["matches_analytic"] is True
    assert _run(tmp_path, "eval", "--samples", str(run / "samples_full.bfmd")) == 0
    rows = _read_csv(run / "eval.csv")
    assert tuple(rows[0]) == EVAL_FIELDS
    assert {r["metric"] for r in rows} >= {"sliced_w2", "mmd_rbf", "gaussian_w2"}
    assert _run(tmp_path, "pca-features") == 0
    assert (run / "pca.png").exists() and (run / "feature_mse.csv").exists()


def test_cli_flops_and_spectral(tmp_path, capsys):
    assert _run(tmp_path, "flops", "--preset", "depth") == 0
    assert "per-step ratio: 0.6667" in capsys.readouterr().out
    assert json.loads((tmp_path / "t" / "flops_depth.json").read_text())["ratio"] == pytest.approx(2 / 3)
    grf = ["--set", "data.kind=grf", "--set", "data.side=8", "--set", "analysis.n_images=20"]
    assert _run(tmp_path, "noise-sweep", *grf) == 0
    rows = _read_csv(tmp_path / "t" / "noise_sweep.csv")
    assert list(rows[0]) == ["t", "SE", "HFR"]
    assert float(rows[0]["SE"]) > float(rows[-1]["SE"])
    assert (tmp_path / "t" / "noise_sweep.png").exists()
    assert _run(tmp_path, "gen-data", *grf, "--set", "data.n_samples=20", "--out", str(tmp_path / "g.bfmd")) == 0
    assert _run(tmp_path, "spectra", *grf, "--samples", str(tmp_path / "g.bfmd")) == 0
    rows = _read_csv(tmp_path / "t" / "radial_profiles.csv")
    assert list(rows[0]) == ["set", "radius", "freq", "mean_power"] and len(rows) == 10
    fr = json.loads((tmp_path / "t" / "frechet.json").read_text())
    assert fr["frechet_distance"] >= 0 and (tmp_path / "t" / "spectra.png").exists()


def test_cli_config_error_exit_code(tmp_path, capsys):
    assert main(["train", "--out-dir", str(tmp_path), "--set", "train.batch_size=10",
                 "--set", "train.segments=4"]) == 2
    assert "not divisible" in capsys.readouterr().err
