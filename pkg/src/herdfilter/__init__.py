"""Kernel herding quadrature and particle filtering for mixture-transition models."""

from .errors import ConfigError, DegenerateFilterError, NumericalError
from .exact import (
    GaussianBelief,
    grid_filter,
    jmls_exact_filter,
    kalman_run,
    kalman_step,
    kalman_update,
)
from .filters import (
    MC_MULTINOMIAL,
    MC_STRATIFIED,
    QMC_SOBOL,
    FilterTrace,
    SamplerKind,
    TransitionMixture,
    build_transition_mixture,
    pf_step,
    run_filter,
    run_rbpf,
    skh,
)
from .fw_quad import FwVariant, SimplexQp, fw_quad, simplex_qp_solve
from .harness import (
    ExperimentConfig,
    MetricRow,
    SummaryRow,
    load_config,
    run_filter_experiment,
    run_quad_experiment,
    run_rbpf_experiment,
    sample_mixture_family,
    summarize,
)
from .kernels import (
    GaussianMixture,
    KernelConfig,
    WeightedParticleSet,
    kernel_eval,
    mc_mean_map_bound,
    mean_map_eval,
    mean_map_sqnorm,
    mmd,
)
from .models import (
    StateSpaceModel,
    make_clgss,
    make_jmls,
    make_lgss,
    make_nonlinear_benchmark,
    simulate,
)
from .qmc import SobolStream, inverse_normal_cdf, qmc_sample_mixture

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DegenerateFilterError",
    "NumericalError",
    "GaussianBelief",
    "grid_filter",
    "jmls_exact_filter",
    "kalman_run",
    "kalman_step",
    "kalman_update",
    "MC_MULTINOMIAL",
    "MC_STRATIFIED",
    "QMC_SOBOL",
    "FilterTrace",
    "SamplerKind",
    "TransitionMixture",
    "build_transition_mixture",
    "pf_step",
    "run_filter",
    "run_rbpf",
    "skh",
    "FwVariant",
    "SimplexQp",
    "fw_quad",
    "simplex_qp_solve",
    "ExperimentConfig",
    "MetricRow",
    "SummaryRow",
    "load_config",
    "run_filter_experiment",
    "run_quad_experiment",
    "run_rbpf_experiment",
    "sample_mixture_family",
    "summarize",
    "GaussianMixture",
    "KernelConfig",
    "WeightedParticleSet",
    "kernel_eval",
    "mc_mean_map_bound",
    "mean_map_eval",
    "mean_map_sqnorm",
    "mmd",
    "StateSpaceModel",
    "make_clgss",
    "make_jmls",
    "make_lgss",
    "make_nonlinear_benchmark",
    "simulate",
    "SobolStream",
    "inverse_normal_cdf",
    "qmc_sample_mixture",
    "__version__",
]
