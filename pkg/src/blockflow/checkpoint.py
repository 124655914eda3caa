"""Binary checkpoints of a network bundle plus, optionally, trainer state.

Layout::

    b"BFMC" | u16 version | u32 header length | JSON header | arrays | u32 CRC32

All integers are little-endian.  The arrays are raw little-endian float64
blobs in the order listed under ``"arrays"`` in the header.  The CRC covers
every byte between the magic and the trailer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import json
import os
import struct
import zlib

import numpy as np

from .models import (
    Architecture,
    BundleDims,
    ConditionedNet,
    Mlp,
    ModelBundle,
    OracleEncoder,
)
from .nn import MlpSpec, OptState
from .schedule import SegmentSchedule
from .training import FrnTrainer, Stage1Trainer, TrainConfig

__all__ = [
    "MAGIC",
    "VERSION",
    "CheckpointFormatError",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "save_trainer",
    "resume_stage1",
    "resume_frn",
]

MAGIC = b"BFMC"
VERSION = 1
_PREFIX = struct.Struct("<HI")


class CheckpointFormatError(ValueError):
    pass


@dataclass
class Checkpoint:
    bundle: ModelBundle
    config: TrainConfig | None = None
    stage: int = 0
    iteration: int = 0
    rng_state: dict | None = None
    opt: dict[str, OptState] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def _net_kind(net) -> str:
    if isinstance(net, OracleEncoder):
        return "oracle"
    if isinstance(net, ConditionedNet):
        return "conditioned"
    return "plain"


def _net_header(net) -> dict:
    h = {"kind": _net_kind(net), "spec": net.spec.to_dict(), "seed": int(net.seed)}
    if isinstance(net, ConditionedNet):
        h["n_classes"] = net.n_classes
        h["feat_dim"] = net.feat_dim
    return h


def _rebuild_net(h: dict, params: dict):
    spec = MlpSpec(**h["spec"])
    if h["kind"] == "oracle":
        return OracleEncoder(spec, h["seed"], params=params)
    if h["kind"] == "conditioned":
        return ConditionedNet(spec, h["n_classes"], h["feat_dim"], seed=h["seed"], params=params)
    if h["kind"] == "plain":
        return Mlp(spec, h["seed"], params=params)
    raise CheckpointFormatError(f"unknown network kind {h['kind']!r}")


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    b = ckpt.bundle
    arrays: list[tuple[str, np.ndarray]] = []
    nets = {}
    for name, net in b.networks().items():
        nets[name] = _net_header(net)
        for k in sorted(net.params):
            arrays.append((f"net/{name}/{k}", net.params[k]))
    opt = {}
    for name, st in sorted(ckpt.opt.items()):
        opt[name] = {"lr": st.lr, "betas": list(st.betas), "weight_decay": st.weight_decay,
                     "eps": st.eps, "step": st.step}
        for k in sorted(st.m):
            arrays.append((f"opt/{name}/m/{k}", st.m[k]))
            arrays.append((f"opt/{name}/v/{k}", st.v[k]))
    header = {
        "schedule": list(b.schedule.boundaries),
        "dims": vars(b.dims),
        "arch": vars(b.arch),
        "seed": b.seed,
        "extra": b.extra,
        "networks": nets,
        "config": ckpt.config.to_dict() if ckpt.config is not None else None,
        "stage": ckpt.stage,
        "iteration": ckpt.iteration,
        "rng_state": ckpt.rng_state,
        "optimizer": opt,
        "meta": ckpt.meta,
        "arrays": [{"name": n, "shape": list(a.shape), "dtype": "<f8"} for n, a in arrays],
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    body = bytearray(_PREFIX.pack(VERSION, len(hbytes)))
    body += hbytes
    for _, a in arrays:
        body += np.ascontiguousarray(a, dtype="<f8").tobytes()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body)))
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: not a BFMC checkpoint (bad magic)")
    if len(raw) < 4 + _PREFIX.size + 4:
        raise CheckpointFormatError(f"{path}: truncated checkpoint")
    version, hlen = _PREFIX.unpack_from(raw, 4)
    if version != VERSION:
        raise CheckpointFormatError(f"{path}: checkpoint format version {version}, expected {VERSION}")
    body = raw[4:-4]
    (crc,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointFormatError(f"{path}: checksum mismatch (corrupt or truncated file)")
    start = 4 + _PREFIX.size
    try:
        header = json.loads(raw[start:start + hlen])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: unreadable header") from exc

    offset = start + hlen
    arrays = {}
    for entry in header["arrays"]:
        if entry["dtype"] != "<f8":
            raise CheckpointFormatError(f"{path}: unsupported array dtype {entry['dtype']!r}")
        shape = tuple(entry["shape"])
        n = int(np.prod(shape, dtype=np.int64)) * 8
        if offset + n > len(raw) - 4:
            raise CheckpointFormatError(f"{path}: array {entry['name']!r} runs past end of file")
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8", count=n // 8, offset=offset).reshape(shape).copy()
        offset += n
    if offset != len(raw) - 4:
        raise CheckpointFormatError(f"{path}: {len(raw) - 4 - offset} trailing bytes after arrays")

    def params_of(prefix):
        p = len(prefix)
        return {k[p:]: v for k, v in arrays.items() if k.startswith(prefix)}

    nets = {name: _rebuild_net(h, params_of(f"net/{name}/")) for name, h in header["networks"].items()}
    schedule = SegmentSchedule(tuple(header["schedule"]))
    blocks = [nets[f"velocity/{m}"] for m in range(1, schedule.M + 1)]
    bundle = ModelBundle(
        schedule=schedule,
        dims=BundleDims(**header["dims"]),
        arch=Architecture(**header["arch"]),
        velocity_blocks=blocks,
        align_net=nets.get("align_net"),
        proj_head=nets.get("proj_head"),
        frn=nets.get("frn"),
        oracle=nets.get("oracle"),
        seed=header["seed"],
        extra=header["extra"],
    )
    opt = {}
    for name, h in header["optimizer"].items():
        opt[name] = OptState(lr=h["lr"], betas=tuple(h["betas"]), weight_decay=h["weight_decay"],
                             eps=h["eps"], step=h["step"],
                             m=params_of(f"opt/{name}/m/"), v=params_of(f"opt/{name}/v/"))
    config = TrainConfig.from_dict(header["config"]) if header["config"] is not None else None
    return Checkpoint(bundle, config, header["stage"], header["iteration"], header["rng_state"], opt, header["meta"])


# Trainer state ----------------------------------------------------------------

def _stream_states(streams):
    return {k: g.bit_generator.state for k, g in streams.items()}


def _restore_streams(streams, states):
    for k, g in streams.items():
        g.bit_generator.state = states[k]


def save_trainer(path, trainer, meta: dict | None = None) -> None:
    """Snapshot a stage-1 or residual-network trainer so it can resume bit-exactly."""
    meta = dict(meta or {})
    if isinstance(trainer, Stage1Trainer):
        stage = 1
        meta["block_updates"] = trainer.block_updates.tolist()
        meta["block_samples"] = trainer.block_samples.tolist()
        opt = trainer.opt
    elif isinstance(trainer, FrnTrainer):
        stage = 2
        meta["frn_residual"] = bool(trainer.residual)
        opt = {"frn": trainer.opt}
    else:
        raise TypeError(f"cannot checkpoint {type(trainer).__name__}")
    save_checkpoint(path, Checkpoint(trainer.bundle, trainer.config, stage, trainer.iteration,
                                     _stream_states(trainer.streams), opt, meta))


def resume_stage1(path, dataset) -> Stage1Trainer:
    ck = load_checkpoint(path)
    if ck.stage != 1 or ck.config is None:
        raise CheckpointFormatError(f"{path}: not a stage-1 training checkpoint")
    tr = Stage1Trainer(ck.config, dataset, bundle=ck.bundle)
    tr.opt = ck.opt
    tr.iteration = ck.iteration
    _restore_streams(tr.streams, ck.rng_state)
    tr.block_updates = np.array(ck.meta["block_updates"], dtype=np.int64)
    tr.block_samples = np.array(ck.meta["block_samples"], dtype=np.int64)
    return tr


def resume_frn(path, dataset) -> FrnTrainer:
    ck = load_checkpoint(path)
    if ck.stage != 2 or ck.config is None:
        raise CheckpointFormatError(f"{path}: not a residual-network training checkpoint")
    tr = FrnTrainer(ck.bundle, ck.config, dataset, residual=ck.meta["frn_residual"])
    tr.opt = ck.opt["frn"]
    tr.iteration = ck.iteration
    _restore_streams(tr.streams, ck.rng_state)
    return tr
