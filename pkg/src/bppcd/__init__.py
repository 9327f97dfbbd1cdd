"""Bayesian change-point detection with a noninformative continuous-time prior."""

from .chain import (
    ChainSpec,
    SegmentLengths,
    StatePath,
    TimeGrid,
    bernstein_marginal,
    continuous_transition,
    discrete_marginal,
    discrete_transition,
    log_bpp_prior,
    log_prior_num_segments,
    sample_discrete_changepoints,
    sample_segment_lengths,
)
from .config import RunConfig
from .errors import InvalidInputError, NumericFailureError
from .inference import (
    DetectionReport,
    FBResult,
    FitResult,
    bayes_estimator,
    detect,
    em_fit,
    forward_backward,
    log_posterior_num_segments,
)
from .model import (
    DesignBundle,
    HarmonicSpec,
    RobustConfig,
    SegmentParams,
    build_design,
    mean_function,
)

__version__ = "0.1.0"

__all__ = [
    "ChainSpec",
    "DesignBundle",
    "DetectionReport",
    "FBResult",
    "FitResult",
    "HarmonicSpec",
    "InvalidInputError",
    "NumericFailureError",
    "RobustConfig",
    "RunConfig",
    "SegmentLengths",
    "SegmentParams",
    "StatePath",
    "TimeGrid",
    "bayes_estimator",
    "bernstein_marginal",
    "build_design",
    "continuous_transition",
    "detect",
    "discrete_marginal",
    "discrete_transition",
    "em_fit",
    "forward_backward",
    "log_bpp_prior",
    "log_posterior_num_segments",
    "log_prior_num_segments",
    "mean_function",
    "sample_discrete_changepoints",
    "sample_segment_lengths",
]
