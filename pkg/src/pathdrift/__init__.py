"""Transition densities of SDEs with path-dependent drift.

Three estimators of ``p_t(x, y)`` share one model description: the
Girsanov-weighted kernel estimator, the first-order representation (constant
diffusion) and the unbiased parametrix estimator driven by a counting
process. Closed forms, tamed one-step schemes and convergence experiments
serve as oracles and diagnostics.
"""

from .closedforms import (
    GaussianEnvelope,
    bangbang_bracket,
    bangbang_peak_density,
    calibrate_envelope,
    envelope_bracket,
    ou_density,
    sharp_bound_verdict,
)
from .convergence import RateFitResult, density_rate_experiment, drift_discretization_error
from .exceptions import ConfigError, DomainError, NumericError, PathDriftError, UnsupportedMethodError
from .girsanov import (
    FirstOrderDensity,
    GirsanovAccumulator,
    GirsanovKernelDensity,
    density_first_order,
    density_girsanov_kernel,
    girsanov_weight,
    holder_modulus_diagnostic,
    martingale_check,
    novikov_partition,
    t_threshold,
    z_moment_bound,
)
from .harness import ExperimentReport, aggregate, cf_decay_diagnostic
from .model import (
    FunctionalSpec,
    FunctionalState,
    LinearNu,
    PathDependentModel,
    eval_drift,
    functional_state,
    model_from_dict,
    simple_model,
    validate_growth,
)
from .parametrix import (
    CountingSpec,
    UnbiasedDensity,
    beta_convolution,
    gaussian_density,
    hermite_first,
    hermite_second,
    parametrix_term_bound,
    theta_weight,
    unbiased_density_sample,
    unbiased_expectation,
)
from .rng import DiscretePath, SeedSpec, brownian_path, uniform_grid
from .schemes import (
    TamedCoefficients,
    em_path_dependent,
    euler_maruyama,
    one_step_tamed_terminal,
    strong_error_sweep,
    tame_diffusion,
    tame_drift,
)
from .stats import DensityEstimate

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "CountingSpec",
    "DensityEstimate",
    "DiscretePath",
    "DomainError",
    "ExperimentReport",
    "FirstOrderDensity",
    "FunctionalSpec",
    "FunctionalState",
    "GaussianEnvelope",
    "GirsanovAccumulator",
    "GirsanovKernelDensity",
    "LinearNu",
    "NumericError",
    "PathDependentModel",
    "PathDriftError",
    "RateFitResult",
    "SeedSpec",
    "TamedCoefficients",
    "UnbiasedDensity",
    "UnsupportedMethodError",
    "aggregate",
    "bangbang_bracket",
    "bangbang_peak_density",
    "beta_convolution",
    "brownian_path",
    "calibrate_envelope",
    "cf_decay_diagnostic",
    "density_first_order",
    "density_girsanov_kernel",
    "density_rate_experiment",
    "drift_discretization_error",
    "em_path_dependent",
    "envelope_bracket",
    "euler_maruyama",
    "eval_drift",
    "functional_state",
    "gaussian_density",
    "girsanov_weight",
    "hermite_first",
    "hermite_second",
    "holder_modulus_diagnostic",
    "martingale_check",
    "model_from_dict",
    "novikov_partition",
    "one_step_tamed_terminal",
    "ou_density",
    "parametrix_term_bound",
    "sharp_bound_verdict",
    "simple_model",
    "strong_error_sweep",
    "t_threshold",
    "tame_diffusion",
    "tame_drift",
    "theta_weight",
    "unbiased_density_sample",
    "unbiased_expectation",
    "uniform_grid",
    "validate_growth",
    "z_moment_bound",
]
