"""Numerical homogenization of generalized Stefan problems with oscillating coefficients."""
from .cell import build_effective_model, homogenize_matrix, psi0_value
from .config import ConfigError, ProblemSpec, parse_config, parse_config_text
from .convex import ConvexPotential
from .evolution import homogenized_problem, oscillatory_problem, solve_evolution
from .fields import Constitutive, MatrixField, OscillatoryField, mean_value

__all__ = [
    "ConfigError", "Constitutive", "ConvexPotential", "MatrixField", "OscillatoryField",
    "ProblemSpec", "build_effective_model", "homogenize_matrix", "homogenized_problem",
    "mean_value", "oscillatory_problem", "parse_config", "parse_config_text", "psi0_value",
    "solve_evolution",
]
__version__ = "0.1.0"
