"""Command-line entry point: ``blockflow <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from . import plotting
from .analysis import (
    frechet_curve_distance,
    mean_radial_profile,
    noise_sweep_report,
    pca_top_k,
)
from .analysis.features import collect_features, feature_discrepancy_curve
from .checkpoint import (
    CheckpointFormatError,
    load_checkpoint,
    resume_stage1,
    save_trainer,
)
from .config import ConfigError, RunConfig, dump_config, parse_config
from .data import DatasetFormatError, DatasetSpec, SampleSet, load_dataset, make_dataset, save_dataset
from .flops import NetCost, analytic_flops, per_step_ratio
from .inference import SamplerConfig, SamplingError, draw_labels, sample
from .metrics import gaussian_w2_samples, mmd_rbf, sliced_wasserstein
from .models import GuidanceConfig, UnsupportedOperationError, build_bundle
from .nn import MlpSpec, TrainingDivergenceError
from .schedule import make_uniform_schedule
from .training import FrnTrainer, Stage1Trainer

METRICS_FIELDS = ("run_id", "iteration", "loss_bfm", "loss_align", "loss_total", "loss_frn", "wall_ms")
EVAL_FIELDS = ("run_id", "metric", "value", "n", "seed")


# Helpers ----------------------------------------------------------------------

def _overrides(pairs) -> dict[str, str]:
    out = {}
    for p in pairs or ():
        if "=" not in p:
            raise ConfigError(f"--set expects KEY=VALUE, got {p!r}")
        k, v = p.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _load_config(args) -> RunConfig:
    ov = _overrides(args.set)
    if args.run_id:
        ov["run.id"] = args.run_id
    if args.out_dir:
        ov["run.out_dir"] = args.out_dir
    if args.threads:
        ov["run.threads"] = str(args.threads)
    return parse_config(args.config, ov)


def _run_dir(cfg: RunConfig) -> str:
    path = cfg.out_path()
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(dump_config(cfg))
    return path


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return v


def _write_csv(path, header, rows, append=False):
    exists = append and os.path.exists(path)
    with open(path, "a" if append else "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if not exists:
            w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r[h]) for h in header])


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _dataset(cfg: RunConfig, path) -> SampleSet:
    return load_dataset(path) if path else make_dataset(cfg.data)


def _report_rows(run_id, reports):
    return [dict(run_id=run_id, **vars(r)) for r in reports]


def _say(msg):
    print(msg, flush=True)


# Commands ---------------------------------------------------------------------

def cmd_gen_data(args, cfg: RunConfig):
    out_dir = _run_dir(cfg)
    ds = make_dataset(cfg.data)
    path = args.out or os.path.join(out_dir, "data.bfmd")
    save_dataset(ds, path)
    _say(f"wrote {len(ds)} samples of dim {ds.dim} to {path}")


def cmd_train(args, cfg: RunConfig):
    out_dir = _run_dir(cfg)
    ds = _dataset(cfg, args.data)
    if args.resume:
        trainer = resume_stage1(args.resume, ds)
        _say(f"resumed at iteration {trainer.iteration}")
    else:
        trainer = Stage1Trainer(cfg.train_config(), ds)
    ckpt = os.path.join(out_dir, "bundle.bfmc")
    every = cfg.train.checkpoint_every
    rows = []
    while trainer.iteration < trainer.config.iterations:
        rep = trainer.step()
        if rep.iteration % cfg.train.log_every == 0 or rep.iteration == trainer.config.iterations:
            rows.append(dict(run_id=cfg.run.id, **vars(rep)))
        if every and rep.iteration % every == 0:
            save_trainer(ckpt, trainer)
    save_trainer(ckpt, trainer)
    metrics = os.path.join(out_dir, "metrics.csv")
    _write_csv(metrics, METRICS_FIELDS, rows, append=bool(args.resume))
    if rows:
        plotting.plot_losses(rows, os.path.join(out_dir, "losses.png"))
        last = rows[-1]
        _say(f"iteration {last['iteration']}: loss_bfm={last['loss_bfm']:.5f} "
             f"loss_align={last['loss_align']:.5f} loss_total={last['loss_total']:.5f}")
    _say(f"wrote {ckpt} and {metrics}")


def cmd_train_frn(args, cfg: RunConfig):
    out_dir = _run_dir(cfg)
    ds = _dataset(cfg, args.data)
    ck = load_checkpoint(args.checkpoint or os.path.join(out_dir, "bundle.bfmc"))
    if not ck.bundle.semfeat:
        raise UnsupportedOperationError("checkpoint has no alignment network; train with train.semfeat = true")
    tc = ck.config or cfg.train_config()
    tc.frn_iterations = cfg.train.frn_iterations
    tc.frn_residual = cfg.train.frn_residual
    ck.bundle.frn = None
    trainer = FrnTrainer(ck.bundle, tc, ds)
    reports = trainer.run()
    path = os.path.join(out_dir, "bundle_frn.bfmc")
    save_trainer(path, trainer)
    rows = _report_rows(cfg.run.id, reports)
    metrics = os.path.join(out_dir, "metrics_frn.csv")
    _write_csv(metrics, METRICS_FIELDS, rows)
    if rows:
        plotting.plot_losses(rows, os.path.join(out_dir, "losses_frn.png"), keys=("loss_frn",))
        _say(f"iteration {rows[-1]['iteration']}: loss_frn={rows[-1]['loss_frn']:.6f}")
    _say(f"wrote {path} and {metrics}")


def cmd_sample(args, cfg: RunConfig):
    out_dir = _run_dir(cfg)
    s = cfg.sample
    mode = args.mode or s.mode
    ck_path = args.checkpoint
    if ck_path is None:
        ck_path = os.path.join(out_dir, "bundle_frn.bfmc")
        if mode != "frn" or not os.path.exists(ck_path):
            ck_path = os.path.join(out_dir, "bundle.bfmc")
    bundle = load_checkpoint(ck_path).bundle
    sc = SamplerConfig(
        steps_per_segment=args.steps or s.steps_per_segment,
        guidance=GuidanceConfig(s.guidance if args.guidance is None else args.guidance),
        mode=mode,
        n_samples=args.n or s.n_samples,
        seed=s.seed if args.seed is None else args.seed,
        chunk_size=s.chunk_size,
    )
    if sc.mode == "frn" and bundle.frn is None:
        raise UnsupportedOperationError(
            f"{ck_path} has no trained feature residual network; run 'blockflow train-frn' first"
        )
    labels = draw_labels(sc, bundle.dims.n_classes)
    x, ledger = sample(bundle, sc, labels, threads=cfg.run.threads)
    side = int(round(math.sqrt(bundle.dims.d_x)))
    side = side if side * side == bundle.dims.d_x and bundle.dims.d_x > 2 else 0
    out = args.out or os.path.join(out_dir, f"samples_{sc.mode}.bfmd")
    save_dataset(SampleSet(x, labels, bundle.dims.n_classes, side,
                           {"sampler": {"mode": sc.mode, "K": sc.steps_per_segment,
                                        "w": sc.guidance.w, "seed": sc.seed}}), out)
    led = ledger.to_dict()
    led["analytic"] = _analytic_for(bundle, sc)
    led["matches_analytic"] = all(led[k] == led["analytic"][k] for k in led["analytic"])
    ledger_path = os.path.join(out_dir, f"flops_{sc.mode}.json")
    _write_json(ledger_path, led)
    if bundle.dims.d_x == 2:
        plotting.plot_samples(x, os.path.join(out_dir, f"samples_{sc.mode}.png"))
    _say(f"wrote {len(x)} samples to {out}; {ledger.total()} MACs "
         f"({led['gflops_per_step']:.3e} GMACs per sample-step); ledger in {ledger_path}")


def _analytic_for(bundle, sc: SamplerConfig) -> dict:
    return analytic_flops(
        bundle.velocity_blocks[0].cost,
        M=bundle.M,
        K=sc.steps_per_segment,
        n_samples=sc.n_samples,
        align=bundle.align_net.cost if bundle.align_net is not None else None,
        frn=bundle.frn.cost if (bundle.frn is not None and sc.mode == "frn") else None,
        mode=sc.mode,
        guided=sc.guided,
    )


def cmd_eval(args, cfg: RunConfig):
    out_dir = _run_dir(cfg)
    xs = load_dataset(args.samples).x.astype(np.float64)
    ref = _dataset(cfg, args.reference).x.astype(np.float64)
    a = cfg.analysis
    rows = [
        dict(metric="sliced_w2", value=sliced_wasserstein(xs, ref, a.n_projections, a.seed)),
        dict(metric="mmd_rbf", value=mmd_rbf(xs[:4000], ref[:4000], a.mmd_bandwidth)),
        dict(metric="gaussian_w2", value=gaussian_w2_samples(xs, ref)),
    ]
    for r in rows:
        r.update(run_id=cfg.run.id, n=min(len(xs), len(ref)), seed=a.seed)
    path = os.path.join(out_dir, "eval.csv")
    _write_csv(path, EVAL_FIELDS, rows, append=True)
    _write_json(os.path.join(out_dir, "eval.json"), {r["metric"]: r["value"] for r in rows})
    for r in rows:
        _say(f"{r['metric']}: {r['value']:.6g}")


def _images(ss: SampleSet, what) -> np.ndarray:
    if not ss.side:
        raise ValueError(f"{what} does not hold images (dataset side is 0)")
    return ss.images()


def cmd_spectra(args, cfg: RunConfig):
    out_dir = _run_dir(cfg)
    n = cfg.analysis.n_images
    ref = _images(_dataset(cfg, args.reference), "reference")[:n]
    gen = _images(load_dataset(args.samples), "samples")[:n]
    p_ref, p_gen = mean_radial_profile(ref), mean_radial_profile(gen)
    dist = frechet_curve_distance(p_ref, p_gen)
    rows = [{"set": name, "radius": i, "freq": float(p.freq[i]), "mean_power": float(v)}
            for name, p in (("reference", p_ref), ("samples", p_gen)) for i, v in enumerate(p.power)]
    _write_csv(os.path.join(out_dir, "radial_profiles.csv"), ("set", "radius", "freq", "mean_power"), rows)
    _write_json(os.path.join(out_dir, "frechet.json"),
                {"frechet_distance": dist, "n_reference": len(ref), "n_samples": len(gen)})
    plotting.plot_radial_profiles({"reference": p_ref.power, "samples": p_gen.power},
                                  os.path.join(out_dir, "spectra.png"))
    _say(f"Frechet distance between mean radial spectra: {dist:.6g}")


def cmd_noise_sweep(args, cfg: RunConfig):
    out_dir = _run_dir(cfg)
    spec = cfg.data if cfg.data.kind == "grf" else DatasetSpec(kind="grf", n_samples=cfg.analysis.n_images,
                                                               side=cfg.data.side, beta=cfg.data.beta,
                                                               seed=cfg.data.seed)
    ss = load_dataset(args.data) if args.data else make_dataset(spec)
    imgs = _images(ss, "data")[:cfg.analysis.n_images]
    a = cfg.analysis
    reports = noise_sweep_report(imgs, a.timesteps, seed=a.seed, threshold=a.threshold)
    rows = [{"t": r.t, "SE": r.se, "HFR": r.hfr} for r in reports]
    _write_csv(os.path.join(out_dir, "noise_sweep.csv"), ("t", "SE", "HFR"), rows)
    _write_json(os.path.join(out_dir, "noise_sweep.json"), rows)
    plotting.plot_noise_sweep([r.t for r in reports], [r.se for r in reports], [r.hfr for r in reports],
                              os.path.join(out_dir, "noise_sweep.png"))
    for r in reports:
        _say(f"t={r.t:.3f}  SE={r.se:.5f}  HFR={r.hfr:.5f}")


def cmd_pca_features(args, cfg: RunConfig):
    out_dir = _run_dir(cfg)
    bundle = load_checkpoint(args.checkpoint or os.path.join(out_dir, "bundle.bfmc")).bundle
    ds = _dataset(cfg, args.data)
    a = cfg.analysis
    feats, ts, ids = collect_features(bundle, ds, a.timesteps, n_samples=a.feature_samples, seed=a.seed)
    k = min(a.pca_k, feats.shape[1])
    res = pca_top_k(feats, k)
    rows = []
    for i in range(len(feats)):
        row = {"sample": int(ids[i]), "t": float(ts[i])}
        row.update({f"pc{j + 1}": float(res.projections[i, j]) for j in range(k)})
        rows.append(row)
    _write_csv(os.path.join(out_dir, "pca_features.csv"), ("sample", "t") + tuple(f"pc{j + 1}" for j in range(k)),
               rows)
    _write_json(os.path.join(out_dir, "pca.json"),
                {"eigenvalues": res.eigenvalues.tolist(), "components": res.components.tolist(),
                 "mean": res.mean.tolist()})
    plotting.plot_pca(res.projections, ts, os.path.join(out_dir, "pca.png"))
    curves = feature_discrepancy_curve(bundle, ds, a.feature_samples, a.feature_grid, a.seed)
    drows = [{"segment": c.m, "t": float(t), "mse": float(v)} for c in curves for t, v in zip(c.t, c.mse)]
    _write_csv(os.path.join(out_dir, "feature_mse.csv"), ("segment", "t", "mse"), drows)
    plotting.plot_feature_discrepancy(curves, os.path.join(out_dir, "feature_mse.png"))
    _say("eigenvalues: " + ", ".join(f"{v:.6g}" for v in res.eigenvalues))
    for c in curves:
        _say(f"segment {c.m}: feature-MSE Spearman rho in t = {c.spearman:.3f}")


def depth_ratio(width: int = 64, mono_layers: int = 12, block_layers: int = 8) -> tuple[float, dict, dict]:
    """Per-step MAC ratio of a ``block_layers`` block to a ``mono_layers`` network at equal width."""
    mono = NetCost(MlpSpec(width, width, width, mono_layers))
    block = NetCost(MlpSpec(width, width, width, block_layers))
    return (per_step_ratio(block, mono),
            analytic_flops(mono, M=1, K=1),
            analytic_flops(block, M=1, K=1))


def cmd_flops(args, cfg: RunConfig):
    out_dir = _run_dir(cfg)
    if args.preset == "depth":
        ratio, mono, block = depth_ratio(args.width)
        _write_json(os.path.join(out_dir, "flops_depth.json"),
                    {"ratio": ratio, "monolithic_12": mono, "block_8": block, "width": args.width})
        _say(f"monolithic 12-layer: {mono['total_macs']} MACs/step; block 8-layer: {block['total_macs']} MACs/step")
        _say(f"per-step ratio: {ratio:.4f}")
        return
    if args.checkpoint:
        bundle = load_checkpoint(args.checkpoint).bundle
    else:
        d_x = cfg.data.side ** 2 if cfg.data.kind == "grf" else 2
        bundle = build_bundle(make_uniform_schedule(cfg.train.segments), d_x, cfg.data.n_classes, cfg.arch,
                              semfeat=cfg.train.semfeat, with_frn=cfg.train.semfeat, seed=cfg.train.seed)
    s = cfg.sample
    out = {}
    modes = ("full", "frn") if bundle.frn is not None else ("full",)
    for mode in modes:
        sc = SamplerConfig(s.steps_per_segment, GuidanceConfig(s.guidance), mode, 1, s.seed)
        out[mode] = _analytic_for(bundle, sc)
        _say(f"{mode}: {out[mode]['total_macs']} MACs per sample over {out[mode]['n_steps']} steps "
             f"({out[mode]['gflops_per_step']:.4e} GMACs/step, "
             f"{out[mode]['gflops_per_step_cond_only']:.4e} without guidance)")
    if "frn" in out:
        r = out["frn"]["total_macs"] / out["full"]["total_macs"]
        out["frn_to_full"] = r
        _say(f"residual/full MAC ratio: {r:.4f}")
    _write_json(os.path.join(out_dir, "flops.json"), out)


# Parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    common.add_argument("--run-id", help="overrides run.id")
    common.add_argument("--out-dir", help="overrides run.out_dir")
    common.add_argument("--threads", type=int, help="overrides run.threads")

    p = argparse.ArgumentParser(prog="blockflow", description="Blockwise flow matching toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", parents=[common], help="generate a synthetic dataset")
    s.add_argument("--out", help="output dataset file")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", parents=[common], help="stage-1 training")
    s.add_argument("--data", help="dataset file (default: generate from config)")
    s.add_argument("--resume", help="trainer checkpoint to resume from")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("train-frn", parents=[common], help="train the feature residual network")
    s.add_argument("--checkpoint", help="stage-1 checkpoint (default: <run>/bundle.bfmc)")
    s.add_argument("--data")
    s.set_defaults(func=cmd_train_frn)

    s = sub.add_parser("sample", parents=[common], help="generate samples")
    s.add_argument("--checkpoint")
    s.add_argument("--mode", choices=("full", "frn"))
    s.add_argument("--n", type=int, help="number of samples")
    s.add_argument("--steps", type=int, help="solver steps per segment")
    s.add_argument("--guidance", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("eval", parents=[common], help="two-sample metrics against reference data")
    s.add_argument("--samples", required=True)
    s.add_argument("--reference", help="reference dataset (default: generate from config)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("spectra", parents=[common], help="mean radial spectra and their Frechet distance")
    s.add_argument("--samples", required=True)
    s.add_argument("--reference")
    s.set_defaults(func=cmd_spectra)

    s = sub.add_parser("noise-sweep", parents=[common], help="spectral entropy and HFR along the noise path")
    s.add_argument("--data")
    s.set_defaults(func=cmd_noise_sweep)

    s = sub.add_parser("pca-features", parents=[common], help="PCA of alignment features across t")
    s.add_argument("--checkpoint")
    s.add_argument("--data")
    s.set_defaults(func=cmd_pca_features)

    s = sub.add_parser("flops", parents=[common], help="analytic MAC ledger")
    s.add_argument("--checkpoint")
    s.add_argument("--preset", choices=("depth",))
    s.add_argument("--width", type=int, default=64)
    s.set_defaults(func=cmd_flops)
    return p


_EXPECTED = (ConfigError, DatasetFormatError, CheckpointFormatError, UnsupportedOperationError,
             TrainingDivergenceError, SamplingError, FileNotFoundError, ValueError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        args.func(args, cfg)
    except _EXPECTED as exc:
        print(f"blockflow {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
