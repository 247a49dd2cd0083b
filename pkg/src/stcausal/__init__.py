"""Doubly robust treatment effect estimation for longitudinal cohorts with
latent health states, plus a seeded simulation benchmark harness."""

__version__ = "0.1.0"

from .data import Dataset, SplitIndex, load_dataset, one_hot_state, save_dataset, split
from .dgp import DgpConfig, generate
from .dr import DrEstimate, estimate, estimate_weighted, standard_error
from .elopt import CbpsPropensity, ElSolution, fit_propensity_el, solve_inner_weights
from .hmm import GaussianHmm, HmmModel, baum_welch, forward_backward, sample_paths, viterbi
from .metrics import MetricRow, MetricTable, aggregate
from .mtgcn import GraphSpec, MtgcnRegressor, build_graphs
from .outcome import OutcomeFit, ScadLinear, build_features, fit_arm
from .propensity import PropensityModel, ScadPenalty, scad_deriv, scad_value

__all__ = [
    "__version__",
    "Dataset", "SplitIndex", "split", "one_hot_state", "save_dataset", "load_dataset",
    "DgpConfig", "generate",
    "HmmModel", "GaussianHmm", "sample_paths", "forward_backward", "viterbi", "baum_welch",
    "ScadPenalty", "PropensityModel", "scad_value", "scad_deriv",
    "ElSolution", "CbpsPropensity", "solve_inner_weights", "fit_propensity_el",
    "OutcomeFit", "ScadLinear", "build_features", "fit_arm",
    "GraphSpec", "MtgcnRegressor", "build_graphs",
    "DrEstimate", "estimate", "estimate_weighted", "standard_error",
    "MetricRow", "MetricTable", "aggregate",
]
