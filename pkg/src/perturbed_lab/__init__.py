"""Simulation and verification tools for diffusions perturbed by their running maximum."""

from .coefficients import CoefficientField, check_regularity, make_builtin, parse_coeffs
from .density import DensityEstimate, atom_scan, kde, ks_distance
from .errors import ConvergenceError, NumericalError, PerturbedLabError
from .malliavin import (
    DerivativeField,
    directional_fd,
    h_norm_squared,
    nondegeneracy_report,
    propagate_perturbed,
    propagate_reflected,
    terminal_derivative,
)
from .noise import BrownianGrid, CameronMartinShift, TimeGrid, pair_h, sample, sample_batch, shift
from .perturbed import (
    PerturbedSpec,
    ProcessPath,
    solve_closed_form,
    solve_fixed_point_oracle,
    solve_picard,
)
from .reflected import (
    ReflectedPath,
    ReflectedSpec,
    skorokhod_map,
    solve_picard_reflected,
    solve_stepwise,
)
from .verify import comparison_test, picard_convergence_report, zero_hit_probability

__version__ = "0.1.0"
