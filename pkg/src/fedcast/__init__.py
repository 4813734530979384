"""Deterministic cross-silo federated learning with selective tensor transmission."""

from ._kernels import BACKEND
from .config import FLConfig, MetaConfig, ModelConfig, StrategyKind, TaskConfig, load_config, parse_strategy
from .errors import (CongruenceError, ConfigError, FedcastError, FormatError, InvalidTensorError,
                     NormalizationError, SelectionError)
from .evaluation import corpus_bleu, export_histograms, token_accuracy
from .fl_runtime import ExperimentResult, RoundRecord, Simulator, aggregate_partial, run_experiment
from .meta_threshold import MetaModule, estimate_dloss_dtheta, init_meta, meta_forward, meta_update
from .model_engine import Engine
from .selection import PartialUpdate, select_dp, select_random, select_send_all, select_threshold
from .synth_task import DataPartition, build_partition, make_direction, sample_pairs
from .tensor_core import ParameterSet, deviation_profile, l1_norm, tensor_deviation, weighted_average

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "CongruenceError", "ConfigError", "DataPartition", "Engine", "ExperimentResult",
    "FLConfig", "FedcastError", "FormatError", "InvalidTensorError", "MetaConfig", "MetaModule",
    "ModelConfig", "NormalizationError", "ParameterSet", "PartialUpdate", "RoundRecord",
    "SelectionError", "Simulator", "StrategyKind", "TaskConfig", "aggregate_partial", "build_partition",
    "corpus_bleu", "deviation_profile", "estimate_dloss_dtheta", "export_histograms", "init_meta",
    "l1_norm", "load_config", "make_direction", "meta_forward", "meta_update", "parse_strategy",
    "run_experiment", "sample_pairs", "select_dp", "select_random", "select_send_all",
    "select_threshold", "tensor_deviation", "token_accuracy", "weighted_average",
]
