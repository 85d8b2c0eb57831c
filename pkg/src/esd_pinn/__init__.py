"""Physics-informed network solver for the ESD (energy supply-demand) system.

Submodules: ``esd_model`` (the ODE system), ``mlp`` and ``diff_engine``
(network and its exact derivatives), ``trainer``, ``rk45`` (reference
integrator), ``evaluator`` and ``cli``.
"""

from .esd_model import EsdParameters, State, default_chaotic_params, default_initial_state, rhs
from .evaluator import build_report, compare_metrics, residual_mse
from .rk45 import ToleranceSpec, integrate
from .solution import SolutionTable
from .trainer import TrainingConfig, predict, train

__version__ = "0.1.0"

__all__ = [
    "EsdParameters",
    "SolutionTable",
    "State",
    "ToleranceSpec",
    "TrainingConfig",
    "build_report",
    "compare_metrics",
    "default_chaotic_params",
    "default_initial_state",
    "integrate",
    "predict",
    "residual_mse",
    "rhs",
    "train",
]
