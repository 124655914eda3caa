"""Blockwise flow matching at desk scale."""

from .data import DatasetSpec, SampleSet, load_dataset, make_dataset, save_dataset
from .flops import FlopsLedger, NetCost, analytic_flops
from .inference import SamplerConfig, euler_step, sample, sample_frn, sample_full
from .models import Architecture, GuidanceConfig, ModelBundle, build_bundle
from .schedule import SegmentSchedule, make_uniform_schedule, segment_index
from .training import TrainConfig, train_bfm, train_frn, train_monolithic_fm

__version__ = "0.1.0"

__all__ = [
    "Architecture",
    "DatasetSpec",
    "FlopsLedger",
    "GuidanceConfig",
    "ModelBundle",
    "NetCost",
    "SampleSet",
    "SamplerConfig",
    "SegmentSchedule",
    "TrainConfig",
    "analytic_flops",
    "build_bundle",
    "euler_step",
    "load_dataset",
    "make_dataset",
    "make_uniform_schedule",
    "sample",
    "sample_frn",
    "sample_full",
    "save_dataset",
    "segment_index",
    "train_bfm",
    "train_frn",
    "train_monolithic_fm",
]
