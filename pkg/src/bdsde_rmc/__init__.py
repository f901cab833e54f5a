"""Regression Monte Carlo for backward doubly stochastic differential equations."""

from .basis import BasisSystem, Partition1D, assemble_basis, build_basis, build_partitions, eval_basis_vector
from .errors import BDSDEError, ConfigurationError, NumericalError, SimulationError, ValidationError
from .grid_paths import PathBatch, TimeGrid, build_time_grid, simulate_paths
from .model import BuiltinCase, ProblemSpec, make_builtin_case, validate_problem
from .regression import GramPair, LocalizationReport, gram_matrices, localization_check, solve_least_squares
from .solver import SolveReport, ThetaCoefficients, backward_solve, evaluate_solution, picard_iterate, project_terminal
from .truncation import TruncationProfile, make_truncation, rho_hat, xi

__version__ = "0.1.0"
