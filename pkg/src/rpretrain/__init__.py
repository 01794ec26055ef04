"""Pretrained R-learner: CATE estimation that borrows the support of the
mean-outcome model through adaptive lasso penalty factors."""

from .boosting import fit_basis_rlasso, fit_rboost
from .data import Dataset, FoldAssignment, SeededRng, make_folds
from .dgp import DgpSpec, Simulation, gen_setup, simulate
from .drlearner import aipw_pseudo_outcomes, fit_pretrained_drlasso
from .evaluation import autoc_test_sequential, cate_mse, support_metrics, toc_curve
from .forest import ForestParams, fit_forest_rlearner
from .lasso import PenaltySpec, cv_weighted_lasso, fit_weighted_lasso
from .models import CATEModel
from .nuisance import estimate_nuisances
from .rlearner import fit_pretrained_rlasso, fit_uni_rlasso, penalty_weights

__version__ = "0.1.0"

__all__ = [
    "fit_basis_rlasso", "fit_rboost",
    "Dataset", "FoldAssignment", "SeededRng", "make_folds",
    "DgpSpec", "Simulation", "gen_setup", "simulate",
    "aipw_pseudo_outcomes", "fit_pretrained_drlasso",
    "autoc_test_sequential", "cate_mse", "support_metrics", "toc_curve",
    "ForestParams", "fit_forest_rlearner",
    "PenaltySpec", "cv_weighted_lasso", "fit_weighted_lasso",
    "CATEModel", "estimate_nuisances",
    "fit_pretrained_rlasso", "fit_uni_rlasso", "penalty_weights",
]
