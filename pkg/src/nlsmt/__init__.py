"""Hierarchical phrase-based translation with neural-network hypothesis scoring."""
from .features import (FEATURE_NAMES, FeatureVector, Hypothesis, NBestList, ParallelCorpus,
                       TrainingPair, canonical_order, feature_add)
from .network import (LinearModel, ModelParams, NetworkTopology, DEFAULT_GROUPING, backprop_pair,
                      build_gn, build_standard, build_tdn, init_random, load_model, save_model,
                      score_linear, score_network)

__version__ = "0.1.0"

__all__ = [
    "FEATURE_NAMES", "FeatureVector", "Hypothesis", "NBestList", "ParallelCorpus",
    "TrainingPair", "canonical_order", "feature_add",
    "LinearModel", "ModelParams", "NetworkTopology", "DEFAULT_GROUPING", "backprop_pair",
    "build_gn", "build_standard", "build_tdn", "init_random", "load_model", "save_model",
    "score_linear", "score_network",
]
