"""Constrained Bayesian optimisation with the constrained knowledge gradient."""

__version__ = "0.1.0"

from .design import BoxDomain, OptimizerConfig, lhs_sample, maximize_bounded
from .gp import FitConfig, GpModel, KernelParams, NumericalError, gp_fit, kernel_eval
from .feasibility import ConstraintEnsemble, pf_current, pf_future, recommend, utility
from .ckg import CkgConfig, ConstrainedKG, Discretization, EpigraphInput, ckg_maximize, ckg_value, kg_discrete
from .problems import ProblemSpec, get_problem, list_problems, observe, opportunity_cost
