"""Temporally coded spiking networks for visual place recognition."""

from .config import RunConfig, load_config
from .dataset import (
    GroundTruth,
    TraversalDataset,
    TraversalSpec,
    align_variants,
    ground_truth_identity,
    load_dataset,
    load_traversal,
    synthesize_dataset,
)
from .ensemble import Ensemble, MatchResult, PlaceAssignment, partition_places, query_ensemble, train_ensemble
from .errors import ConfigError, DatasetError, InvalidInputError, InvalidStateError, ModelFileError, VPRTempoError
from .imaging import PreprocessConfig, preprocess
from .metrics import match_place, pr_curve, precision_at_100_recall, recall_at_n, sad_baseline
from .modelfile import load_model, save_model
from .snn import Hyperparams, ModuleNetwork, infer, init_module, train_presentation

__version__ = "0.1.0"
