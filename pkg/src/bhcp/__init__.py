"""Backward heat conduction: recover an initial temperature field from noisy
terminal-time point observations by Tikhonov-regularized least squares, with
a self-adaptive choice of the regularization weight and a statistical
verification harness."""

__version__ = "0.1.0"

from .adapt import LambdaTrace, adapt_lambda, estimate_h2, lambda_step
from .analysis import (
    McSummary,
    SlopeFit,
    fit_slope,
    interior_decay,
    mc_errors,
    qq_correlation,
    qq_points,
    sweep_lambda,
)
from .estimator import TikhonovInverter
from .forward import ForwardConfig, adjoint_solve, forward_solve, sensor_adjoint
from .grid import (
    Field,
    Grid,
    h2_norm_discrete,
    h2_seminorm_discrete,
    l2_norm,
    load_field,
    make_grid,
    save_field,
)
from .observe import (
    NoiseModel,
    Observation,
    SensorSet,
    empirical_inner,
    empirical_norm,
    load_observation,
    observe,
    save_observation,
    uniform_sensors,
)
from .operators import (
    Coefficients,
    EllipticOperator,
    Spectrum,
    analytic_spectrum,
    assemble,
    partial_spectrum,
)
from .presets import a_shape_indicator, initial_condition, product_of_sines
from .tikhonov import (
    DenseNormalModel,
    InversionResult,
    TikhonovProblem,
    direct_solve_small,
    evaluate_J,
    gradient_J,
    minimize,
)

__all__ = [
    "__version__",
    "Grid", "Field", "make_grid", "l2_norm", "h2_seminorm_discrete",
    "h2_norm_discrete", "save_field", "load_field",
    "Coefficients", "EllipticOperator", "Spectrum", "assemble",
    "partial_spectrum", "analytic_spectrum",
    "ForwardConfig", "forward_solve", "adjoint_solve", "sensor_adjoint",
    "SensorSet", "NoiseModel", "Observation", "uniform_sensors",
    "empirical_inner", "empirical_norm", "observe", "save_observation",
    "load_observation",
    "TikhonovProblem", "InversionResult", "evaluate_J", "gradient_J",
    "minimize", "direct_solve_small", "DenseNormalModel",
    "LambdaTrace", "estimate_h2", "lambda_step", "adapt_lambda",
    "SlopeFit", "McSummary", "fit_slope", "qq_points", "qq_correlation",
    "mc_errors", "sweep_lambda", "interior_decay",
    "TikhonovInverter",
    "product_of_sines", "a_shape_indicator", "initial_condition",
]
