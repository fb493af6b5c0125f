"""Adaptive meshfree variational PINN solver for 2D elliptic problems."""

from .adapt import RefinementConfig, refine, select_tau
from .assembly import VariationalLoss, build_tensors
from .driver import RunConfig, run
from .estimator import CoverEstimator, EstimatorBreakdown, global_indicator, patch_indicator
from .geometry import Cover, Domain, Patch, cover_check, cut_patch, initial_covers
from .network import MLP, BoundaryLift, Model
from .optim import LBFGS, Adam, TrainSchedule, train_generation
from .problems import ProblemSpec, get_problem, relative_h1_error

__version__ = "0.1.0"

__all__ = [
    "MLP", "LBFGS", "Adam", "BoundaryLift", "Cover", "CoverEstimator", "Domain",
    "EstimatorBreakdown", "Model", "Patch", "ProblemSpec", "RefinementConfig", "RunConfig",
    "TrainSchedule", "VariationalLoss", "build_tensors", "cover_check", "cut_patch",
    "get_problem", "global_indicator", "initial_covers", "patch_indicator", "refine",
    "relative_h1_error", "run", "select_tau", "train_generation",
]
