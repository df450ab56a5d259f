"""Markovian projection of jump-diffusions: simulation, estimation, forward PIDE."""

from .core import (AssumptionAuditConfig, CompensatorDirect, DensityField, FunctionOfMarkovSpec, ItoModel, JumpMarks,
                   MarginalComparison, MimicReport, PathEnsemble, PoissonDriven, ProjectedCoefficients, TimeChangeSpec,
                   TimeGrid)
from .compensator import ScalarAmplitude, pushforward_density, pushforward_set_mass
from .diagnostics import audit_assumptions, check_martingale_preservation, compare_marginals
from .errors import ConfigError, NumericalError, StepSizeError, ThinningWarning
from .levy import ContinuousJumpLaw, DiscreteJumpLaw, FiniteActivity, InfiniteActivity, StableTail
from .pide import build_generator_matrix, evolve_forward
from .projection import (conditional_expectation_slice, estimate_projected_coefficients, project_function_of_markov,
                         project_time_changed_levy)
from .simulate import simulate_ito, simulate_projected

__version__ = "0.1.0"

__all__ = [
    "AssumptionAuditConfig", "CompensatorDirect", "ConfigError", "ContinuousJumpLaw", "DensityField",
    "DiscreteJumpLaw", "FiniteActivity", "FunctionOfMarkovSpec", "InfiniteActivity", "ItoModel", "JumpMarks",
    "MarginalComparison", "MimicReport", "NumericalError", "PathEnsemble", "PoissonDriven", "ProjectedCoefficients",
    "ScalarAmplitude", "StableTail", "StepSizeError", "ThinningWarning", "TimeChangeSpec", "TimeGrid",
    "audit_assumptions", "build_generator_matrix", "check_martingale_preservation", "compare_marginals",
    "conditional_expectation_slice", "estimate_projected_coefficients", "evolve_forward", "project_function_of_markov",
    "project_time_changed_levy", "pushforward_density", "pushforward_set_mass", "simulate_ito", "simulate_projected",
]
