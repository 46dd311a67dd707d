"""Stabilized-weight estimation of causal effects of general treatments.

The package estimates weighted-average and dose-response effects of
binary, multi-valued, or continuous treatments in four stages:

1. ``sieve``     -- orthonormal polynomial bases for treatment and covariates.
2. ``balance``   -- stabilized weights from a globally concave dual problem.
3. ``mestimate`` -- weighted M-estimation (mean, quantile, expectile losses).
4. ``inference`` -- influence-function variance estimates and intervals.

``doseresponse`` fits nonparametric curves under the same weights,
``simulate`` provides a reproducible Monte Carlo harness, and ``cli``
exposes everything as the ``swbal`` command.
"""

from .balance import (
    WeightSolution,
    balance_residual,
    dual_objective,
    primal_entropy_oracle,
    solve_weights,
)
from .doseresponse import CurveFit, average_effect, curve_grid, curve_variance, fit_curve
from .errors import (
    BalanceInfeasibleError,
    DataError,
    NotConvergedError,
    RankDeficientError,
    SwbalError,
)
from .inference import (
    KernelConfig,
    VarianceEstimate,
    confidence_interval,
    estimate_H,
    estimate_influence,
    fixed_weight_variance,
    kernel_density,
    sandwich_variance_smooth,
    variance,
)
from .mestimate import FitResult, fit, fit_known_weights, weighted_quantile
from .model import (
    Dataset,
    LinkSpec,
    LossSpec,
    asymmetric_squared,
    check,
    indicator_link,
    polynomial_link,
    squared_error,
)
from .sieve import (
    BasisSpec,
    SieveBasis,
    build_basis,
    covariate_poly,
    evaluate_at,
    explicit_columns,
    orthonormalize,
    treatment_poly,
)
from .simulate import (
    DgpSpec,
    EstimatorConfig,
    SimReport,
    generate,
    monte_carlo,
    report_rows,
    standard_configs,
    true_weights,
)

__version__ = "0.1.0"

__all__ = [
    "BalanceInfeasibleError",
    "BasisSpec",
    "CurveFit",
    "Dataset",
    "DataError",
    "DgpSpec",
    "EstimatorConfig",
    "FitResult",
    "KernelConfig",
    "LinkSpec",
    "LossSpec",
    "NotConvergedError",
    "RankDeficientError",
    "SieveBasis",
    "SimReport",
    "SwbalError",
    "VarianceEstimate",
    "WeightSolution",
    "asymmetric_squared",
    "average_effect",
    "balance_residual",
    "build_basis",
    "check",
    "confidence_interval",
    "covariate_poly",
    "curve_grid",
    "curve_variance",
    "dual_objective",
    "estimate_H",
    "estimate_influence",
    "evaluate_at",
    "explicit_columns",
    "fit",
    "fit_curve",
    "fit_known_weights",
    "fixed_weight_variance",
    "generate",
    "indicator_link",
    "kernel_density",
    "monte_carlo",
    "orthonormalize",
    "polynomial_link",
    "primal_entropy_oracle",
    "report_rows",
    "sandwich_variance_smooth",
    "solve_weights",
    "squared_error",
    "standard_configs",
    "treatment_poly",
    "true_weights",
    "variance",
    "weighted_quantile",
]
