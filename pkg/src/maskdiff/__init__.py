"""Exact and Monte-Carlo laboratory for the sampling error of masked diffusion samplers."""
from .analysis import (
    BoundReport,
    KlReport,
    bound_report,
    corollary_bound,
    decoupling_check,
    kl_decomposition_exact,
    kl_expected_exact,
    kl_given_mask_exact,
    kl_mc,
    lower_bound_value,
    mi_sum,
    refined_bound,
    ter_gap,
    thm1_bound,
    two_batch_identity_check,
)
from .errors import ConfigError, InvalidArgument, MaskDiffError, ScheduleInvalid, TooLarge, ZeroProbabilityContext
from .kernels import BACKEND
from .oracle import Categorical, PottsChain, TabularDistribution
from .predictor import MaskPredictor, optimal, perturbed, training_error
from .sampler import SampleRun, UnmaskPolicy, output_log_prob, sample
from .schedule import (
    MASK,
    MaskSchedule,
    MaskTrajectory,
    RandomLowerBoundSchedule,
    balanced_schedule,
    enumerate_trajectories,
    lower_bound_schedule,
    sample_trajectory,
)

__version__ = "0.1.0"
