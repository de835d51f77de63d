"""Robust adversarial immune-inspired learning system.

Classifies queries by evolving populations of nearest neighbors toward the
query across a network's feature layers, then voting the surviving plasma
cells.  Ships with a DkNN baseline, FGSM/PGD attacks, adaptive memory
hardening, and an experiment harness with a CLI.
"""

from .adaptive import MemoryBank, harden, load_vectors, save_vectors
from .attacks import AttackConfig, attack_batch, fgsm, pgd
from .dknn import CalibrationSet, DkNNResult, credibility, dknn_predict
from .errors import ConfigError, DataError, FormatError, RailsError
from .expansion import (ExpansionConfig, GenerationTrace, Population,
                        PopulationMember, crossover, expand, init_population,
                        mutate, select_parents, selection_probabilities)
from .featmap import (DenseLayer, FeatureNetwork, init_network, load_weights,
                      save_weights, train_network)
from .flocking import Dataset, NeighborSet, ReferenceFeatures, flock
from .harness import (EvalReport, ExperimentSpec, SSALReport,
                      build_experiment, evaluate, intersection_counts,
                      intersection_matrix, load_idx, run_ssal, synth_dataset)
from .maturation import (MaturationResult, RailsPrediction, SelectedData,
                         consensus, select_plasma_memory)
from .numerics import affinity, derive_stream
from .predictor import RailsConfig, rails_predict

__all__ = [
    "AttackConfig", "CalibrationSet", "ConfigError", "DataError", "Dataset",
    "DenseLayer", "DkNNResult", "EvalReport", "ExpansionConfig",
    "ExperimentSpec", "FeatureNetwork", "FormatError", "GenerationTrace",
    "MaturationResult", "MemoryBank", "NeighborSet", "Population",
    "PopulationMember", "RailsConfig", "RailsError", "RailsPrediction",
    "ReferenceFeatures", "SelectedData", "SSALReport", "affinity",
    "attack_batch", "build_experiment", "consensus", "credibility",
    "crossover", "derive_stream", "dknn_predict", "evaluate", "expand",
    "fgsm", "flock", "harden", "init_network", "init_population",
    "intersection_counts", "intersection_matrix", "load_idx",
    "load_vectors", "load_weights", "mutate", "pgd", "rails_predict",
    "run_ssal", "save_vectors", "save_weights", "select_parents",
    "select_plasma_memory", "selection_probabilities", "synth_dataset",
    "train_network",
]
