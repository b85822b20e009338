"""Spatio-temporal binomial regression with Polya-Gamma Gibbs sampling.

Logistic binomial counts on areal regions over time, with predictive-process
spatially varying coefficients and proper CAR / AR(1) random effects.
"""

from __future__ import annotations

from .gibbs import ChainConfig, ChainError, PosteriorDraws, run_chain
from .model import (
    Dataset,
    DatasetError,
    HyperParams,
    LatentState,
    ModelSpec,
    Region,
    linear_predictor,
    logistic,
    validate_dataset,
)
from .rng import RngStream
from .sim import SimDesign, generate_dataset, run_replications
from .spatial import SpatialOperators, build_operators

__version__ = "0.1.0"

__all__ = [
    "ChainConfig",
    "ChainError",
    "Dataset",
    "DatasetError",
    "HyperParams",
    "LatentState",
    "ModelSpec",
    "PosteriorDraws",
    "Region",
    "RngStream",
    "SimDesign",
    "SpatialOperators",
    "build_operators",
    "generate_dataset",
    "linear_predictor",
    "logistic",
    "run_chain",
    "run_replications",
    "validate_dataset",
]
