"""Numerical laboratory for periodic dynamics of scale-invariant objectives under weight decay."""

from .objectives import (
    CertificationError,
    DomainError,
    GradientEval,
    Objective,
    Quadratic,
    ToyRational,
    certify_inverse_homogeneity,
    certify_orthogonality,
    check_gradient,
    get_objective,
    register,
    register_prefix,
    toy_rational_eval,
)
from .dynamics import (
    ClosedFormViolation,
    DivergenceError,
    OptimizerConfig,
    TraceRecord,
    Trajectory,
    cosine_distance,
    predicted_cosine,
    predicted_norm_sq,
    rescaled_equivalence,
    run,
    sphere_projected_step,
    step,
)

from .jumps import (
    GradientBounds,
    JumpEvent,
    delta_envelopes,
    detect_jumps,
    equilibrium_band,
    exact_jump_thresholds,
    fit_envelopes,
    jump_thresholds,
    jump_time_bounds,
    period_frequency_report,
    segment_phases,
)
from .betaseq import (
    BetaDetParams,
    BetaUndetParams,
    gamma_map,
    iterate_det,
    iterate_undet,
)
from . import net  # noqa: F401  registers the "si-net:" objectives

__version__ = "0.1.0"
