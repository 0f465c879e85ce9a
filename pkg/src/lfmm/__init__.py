"""Asymptotics of regularized ERM classifiers on latent factor mixture models."""

__version__ = "0.1.0"

from .model import (
    Dataset,
    LfmmSpec,
    NoiseLaw,
    ValidationReport,
    build_haar_orthogonal,
    equivalent_gmm,
    haar_spec,
    sample_dataset,
    validate_spec,
)
from .losses import get_loss, h_map, prox
from .spectral import SpectralCache, build_cache
from .fixed_point import FixedPoint, OrderParameters, build_grid, closed_form_square_loss, solve, solve_multistart
from .erm import McReport, cross_test, run_trials, train
from .metrics import (
    ScoreLaw,
    UniversalityVerdict,
    generalization_accuracy,
    score_density,
    training_accuracy,
    universality_audit,
)

__all__ = [
    "Dataset", "LfmmSpec", "NoiseLaw", "ValidationReport", "build_haar_orthogonal", "equivalent_gmm",
    "haar_spec", "sample_dataset", "validate_spec", "get_loss", "h_map", "prox", "SpectralCache",
    "build_cache", "FixedPoint", "OrderParameters", "build_grid", "closed_form_square_loss", "solve",
    "solve_multistart", "McReport", "cross_test", "run_trials", "train", "ScoreLaw",
    "UniversalityVerdict", "generalization_accuracy", "score_density", "training_accuracy",
    "universality_audit",
]
