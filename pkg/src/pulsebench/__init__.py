"""Synthetic rPPG benchmark toolkit with a two-branch identity-aware network."""

from .errors import PulseBenchError
from .ingest import DatasetIndex, Record, index_dataset, load_record
from .metrics import MetricsReport, bland_altman, error_stats
from .model import Checkpoint, ModelConfig, RFaceNet
from .spectral import HrBand, estimate_hr, soft_hr
from .synthgen import generate_dataset
from .trainer import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "Checkpoint", "DatasetIndex", "HrBand", "MetricsReport", "ModelConfig", "PulseBenchError", "RFaceNet",
    "Record", "TrainConfig", "bland_altman", "error_stats", "estimate_hr", "evaluate", "generate_dataset",
    "index_dataset",
    "load_record", "soft_hr", "train",
]
