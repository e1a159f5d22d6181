"""Bayesian additive regression trees with soft/hard trees and sparsity-inducing split priors."""

from .data import DataError, Dataset, GroupingMeta, ScalingRecord, load_csv, standardize
from .draws import PosteriorDraws
from .model import fit, group_mass, inclusion_probabilities, predict
from .sampler import ChainConfig, ConfigError, run_chain
from .selectors import DirichletSelector, LDirichletSelector, UniformSelector, c_schedule

__all__ = [
    "ChainConfig",
    "ConfigError",
    "DataError",
    "Dataset",
    "DirichletSelector",
    "GroupingMeta",
    "LDirichletSelector",
    "PosteriorDraws",
    "ScalingRecord",
    "UniformSelector",
    "c_schedule",
    "fit",
    "group_mass",
    "inclusion_probabilities",
    "load_csv",
    "predict",
    "run_chain",
    "standardize",
]
