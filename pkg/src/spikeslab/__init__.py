"""Scalable Gibbs samplers for Bayesian spike-and-slab regression.

The linear, probit and logistic samplers keep ``I + X D^{-1} X^T`` and
its inverse up to date across sweeps with low-rank corrections, so a
sweep costs ``O(max(n^2 p_t, n p))`` where ``p_t`` is the number of
covariates that changed spike/slab membership (or the smaller side of the
current split).  Reference engines that recompute everything draw the
same random numbers, so results can be compared draw for draw.
"""

__version__ = "0.1.0"

from .data import Dataset, SyntheticSpec, default_hyperparams, generate_synthetic, load_csv
from .diagnostics import exact_linear_posterior, inclusion_probabilities, median_model, tpr_fdr
from .distributions import RngStream
from .errors import (
    ConfigError,
    DataError,
    DimensionError,
    FactorizationError,
    NumericalError,
    ParameterDomainError,
    SpikeSlabError,
    StateError,
)
from .samplers import ChainOutput, Hyperparams, run_chain

__all__ = [
    "__version__",
    "ChainOutput",
    "ConfigError",
    "DataError",
    "Dataset",
    "DimensionError",
    "FactorizationError",
    "Hyperparams",
    "NumericalError",
    "ParameterDomainError",
    "RngStream",
    "SpikeSlabError",
    "StateError",
    "SyntheticSpec",
    "default_hyperparams",
    "exact_linear_posterior",
    "generate_synthetic",
    "inclusion_probabilities",
    "load_csv",
    "median_model",
    "run_chain",
    "tpr_fdr",
]
