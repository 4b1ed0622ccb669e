"""Bayesian optimization over a finite pool of attributed graphs with a deep graph surrogate."""

from .acquisition import expected_improvement, integrated_ei, select_next
from .benchmarks import SyntheticSpec, generate_pool, hartmann4, situation_objective, situation_pool
from .blr import BLRHyper, fit, log_marginal_likelihood, predict
from .graph import AttributedGraph, GraphPool, read_pool, write_pool
from .loop import DGBO, ExperimentConfig, RunRecord, SeedBundle, random_baseline, run
from .mcmc import PriorSpec, sample_posterior
from .surrogate import SurrogateConfig, SurrogateParams, init_params, train

__version__ = "0.1.0"
