"""Stochastic-factor ordered-Probit model of rating migrations.

Simulation, closed-form and quadrature transition matrices, composite
likelihood estimation with sandwich inference, and Monte-Carlo batteries.
"""

from .designs import DesignConfig, design_params
from .estimator import (CompositeLikelihoodMigration, EstimationResult, OptimizerConfig, fit,
                        fit_cl1, fit_cl12, fit_cl2, fit_two_step)
from .experiments import McSummary, RiskMeasures, risk_measures, run_battery
from .hac import CovarianceEstimate, HacConfig, hac_covariance, t_statistics
from .kernel import (GaussHermite, MonteCarlo, conditional_matrix, expected_matrices,
                     expected_matrix, horizon2_matrix, horizon_h_matrix, horizon_matrices,
                     stationary_distribution)
from .likelihood import TransitionCounts, ZeroProbabilityError, build_counts, cl1, cl12, cl2
from .params import (ModelParams, ReducedParamsCL1, cl1_reduce, from_unconstrained,
                     normalize_cl2, to_unconstrained)
from .simulate import RatingPanel, simulate_factor, simulate_panel

__version__ = "0.1.0"

__all__ = [
    "CompositeLikelihoodMigration", "CovarianceEstimate", "DesignConfig", "EstimationResult",
    "GaussHermite", "HacConfig", "McSummary", "ModelParams", "MonteCarlo", "OptimizerConfig",
    "RatingPanel", "ReducedParamsCL1", "RiskMeasures", "TransitionCounts",
    "ZeroProbabilityError", "build_counts", "cl1", "cl12", "cl1_reduce", "cl2",
    "conditional_matrix", "design_params", "expected_matrices", "expected_matrix", "fit",
    "fit_cl1", "fit_cl12", "fit_cl2", "fit_two_step", "from_unconstrained", "hac_covariance",
    "horizon2_matrix", "horizon_h_matrix", "horizon_matrices", "normalize_cl2", "risk_measures",
    "run_battery", "simulate_factor", "simulate_panel", "stationary_distribution",
    "t_statistics", "to_unconstrained",
]
