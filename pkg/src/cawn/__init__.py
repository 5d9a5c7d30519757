"""Temporal link prediction with causal anonymous walks."""

from .temporal_graph import TemporalStore, build_store
from .sampler import PAD, SamplerConfig, Walk, make_rng, sample_walks
from .anonymize import anonymize_walks, compute_icaw
from .encoder import EncoderConfig, init_params, predict_link
from .data import EventStream, load_edge_list, load_jodie_csv
from .evaluation import TrainConfig, auc, ap, chronological_split, evaluate, inductive_mask, train

__all__ = [
    "PAD",
    "EncoderConfig",
    "EventStream",
    "SamplerConfig",
    "TemporalStore",
    "TrainConfig",
    "Walk",
    "anonymize_walks",
    "ap",
    "auc",
    "build_store",
    "chronological_split",
    "compute_icaw",
    "evaluate",
    "inductive_mask",
    "init_params",
    "load_edge_list",
    "load_jodie_csv",
    "make_rng",
    "predict_link",
    "sample_walks",
    "train",
]
