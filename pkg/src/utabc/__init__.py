"""Likelihood-free SMC with curve-predicted acceptance thresholds."""

from .errors import (
    BudgetExhausted,
    ConfigError,
    CurvePredictionFailure,
    GmmFitError,
    NumericalError,
    SchedulerConverged,
    SimulationFailure,
    UtabcError,
)
from .gmm import (
    GaussianComponent,
    GaussianMixture,
    effective_sample_size,
    fit_em,
    sample_mixture,
    select_components,
)
from .models import (
    Dataset,
    ModelSpec,
    OdeSystem,
    Prior,
    Problem,
    build_problem,
    distance,
    hopf_rhs,
    model_names,
    repressilator_rhs,
    rk4_step,
    simulate,
    toy_g,
)
from .scheduler import (
    AcceptanceCurve,
    AdaptiveScheduler,
    QuantileScheduler,
    ThresholdDecision,
    curvature,
    curve_prediction_error,
    predict_curve,
    predict_curve_from_prior,
    quantile_scheduler,
    select_threshold,
    smooth_step,
)
from .smc import (
    Particle,
    PerturbationKernel,
    Population,
    RunResult,
    adapt_kernel,
    compute_weight,
    compute_weights,
    quantile_threshold,
    rejection_round,
    run_abc_smc,
    sample_and_perturb,
)
from .ut import OutputGaussian, SigmaPointSet, UtParams, predict_output_mixture, sigma_points, ut_propagate

from . import benchmarks, io  # noqa: E402  (submodules, imported after their dependencies)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "benchmarks", "io",
    # errors
    "UtabcError", "SimulationFailure", "BudgetExhausted", "SchedulerConverged",
    "CurvePredictionFailure", "GmmFitError", "NumericalError", "ConfigError",
    # models
    "Dataset", "ModelSpec", "OdeSystem", "Prior", "Problem", "model_names",
    "build_problem", "distance", "hopf_rhs", "repressilator_rhs", "rk4_step",
    "simulate", "toy_g",
    # smc
    "Particle", "Population", "PerturbationKernel", "RunResult", "adapt_kernel",
    "compute_weight", "compute_weights", "quantile_threshold", "rejection_round",
    "run_abc_smc", "sample_and_perturb",
    # gmm
    "GaussianComponent", "GaussianMixture", "effective_sample_size", "fit_em",
    "sample_mixture", "select_components",
    # ut
    "UtParams", "SigmaPointSet", "OutputGaussian", "sigma_points", "ut_propagate",
    "predict_output_mixture",
    # scheduler
    "AcceptanceCurve", "ThresholdDecision", "AdaptiveScheduler", "QuantileScheduler",
    "smooth_step", "curvature", "predict_curve", "predict_curve_from_prior",
    "select_threshold", "quantile_scheduler", "curve_prediction_error",
]
