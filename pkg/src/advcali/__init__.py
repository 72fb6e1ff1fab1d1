"""Adversarial group-aware temperature scaling for graph neural network calibration."""

__version__ = "0.1.0"

from .autodiff import Tape, Tensor, backward
from .community import Partition, louvain, modularity
from .estimators import AdvCaliCalibrator, TemperatureScaling, Uncalibrated, VectorScaling
from .exceptions import DomainError, NumericError, ParseError, ShapeError, TapeStateError, ValidationError
from .graph import Graph, NodeDataset, gcn_normalize, load_dataset, top_degree_mask
from .losses import ConfidenceView, DistanceKind, group_ece
from .metrics import MetricReport, degree_ece, ece, evaluate
from .models import GcnTemperatureScaler, GinGroupDetector, softmax, ts_fit, vs_fit
from .synth import PlantRule, SbmSpec, SyntheticInstance, build_instance, gen_sbm, plant_miscalibration
from .trainer import TrainConfig, TrainTrace, cross_validate, split_labels, train_advcali, train_classifier

__all__ = [
    "Tape", "Tensor", "backward",
    "Partition", "louvain", "modularity",
    "AdvCaliCalibrator", "TemperatureScaling", "Uncalibrated", "VectorScaling",
    "DomainError", "NumericError", "ParseError", "ShapeError", "TapeStateError", "ValidationError",
    "Graph", "NodeDataset", "gcn_normalize", "load_dataset", "top_degree_mask",
    "ConfidenceView", "DistanceKind", "group_ece",
    "MetricReport", "degree_ece", "ece", "evaluate",
    "GcnTemperatureScaler", "GinGroupDetector", "softmax", "ts_fit", "vs_fit",
    "PlantRule", "SbmSpec", "SyntheticInstance", "build_instance", "gen_sbm", "plant_miscalibration",
    "TrainConfig", "TrainTrace", "cross_validate", "split_labels", "train_advcali", "train_classifier",
]
