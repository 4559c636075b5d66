"""Label face images with identities by matching them against device presence logs."""

from .adapter import AdapterModel, LinearAdapter, TrainConfig, train_adapter
from .association import Assignment, hungarian_assign
from .clustering import CrossModalAgglomerative, agglomerative_cluster, similarity_matrix
from .core import NON_POI, Dataset, Event, FaceSample, HyperParams, Identity, validate_dataset
from .ingestion import load_dataset
from .metrics import cmc_curve, confusion_matrix, labeling_metrics, noise_report
from .pipeline import AutoTune, RunResult, run
from .simulation import SimConfig, generate
from .voting import SoftLabel, soft_labels, sweep_and_vote

__version__ = "0.1.0"

__all__ = [
    "NON_POI",
    "AdapterModel",
    "Assignment",
    "AutoTune",
    "CrossModalAgglomerative",
    "Dataset",
    "Event",
    "FaceSample",
    "HyperParams",
    "Identity",
    "LinearAdapter",
    "RunResult",
    "SimConfig",
    "SoftLabel",
    "TrainConfig",
    "agglomerative_cluster",
    "cmc_curve",
    "confusion_matrix",
    "generate",
    "hungarian_assign",
    "labeling_metrics",
    "load_dataset",
    "noise_report",
    "run",
    "similarity_matrix",
    "soft_labels",
    "sweep_and_vote",
    "train_adapter",
    "validate_dataset",
]
