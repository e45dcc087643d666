"""Simulation toolkit for federated adaptive optimisation with shared preconditioners."""

from .engine import RunConfig, RunRecord, grid_search, run_experiment, sample_accounting
from .optimizers import HyperParams, get_algorithm
from .problems import make_counterexample, make_logistic, make_quadratic

__all__ = [
    "HyperParams", "RunConfig", "RunRecord", "get_algorithm", "grid_search",
    "make_counterexample", "make_logistic", "make_quadratic", "run_experiment",
    "sample_accounting",
]
