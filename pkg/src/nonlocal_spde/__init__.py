"""Forward and backward stochastic heat equations with non-local time-averaged conditions.

Everything is solved in the Dirichlet eigenbasis of a 1D finite-difference
elliptic operator; see the README for the model and the command-line tool.
"""

# ruff: noqa: F401
from .backward import (
    BackwardProblem,
    BackwardSolution,
    RandomFieldRep,
    backward_cauchy,
    condition_map,
    condition_residual,
    integrand_transform,
    mean_level,
    mode_process,
    reconstruct_terminal,
    solve_backward_nonlocal,
    source_component,
)
from .errors import (
    ConditionViolation,
    IllPosedWeight,
    NonlocalSPDEError,
    SolverError,
    SupportViolation,
    TailTooLarge,
    ThetaViolation,
    UnstableStep,
    ValidationError,
)
from .expint import ModeSource, phi, propagate_segment
from .forward import (
    ForwardProblem,
    ModeEnsemble,
    NoiseTerm,
    apply_M,
    apply_M0,
    mean_evolve,
    nonlocal_average,
    recover_initial,
    recover_modes,
    simulate_forward,
    solve_forward_nonlocal,
)
from .report import ResidualReport, discrete_norms
from .spectral import Grid1D, SpectralBasis, assemble_operator, eigendecompose, lift, project
from .stochastic import DetIntegrand, TimeGrid, WienerEnsemble, ito_integral, kernel_F, kernel_Phi, sample_wiener
from .verification import Tolerances, check_conditions, conditioning_report, superparabolicity_check
from .weight import NonlocalWeight, backward_denominator, forward_multiplier, q_factor, validate

__version__ = "0.1.0"
