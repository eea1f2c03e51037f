"""Poisson total-variation rate estimation for sparse photon-counting lidar.

The package estimates photon arrival-rate images from time-tagged photon
counts:  a Poisson likelihood with anisotropic total-variation
regularization is minimized by a proximal-gradient solver, resolution by
resolution from coarse to fine, with the penalty weight chosen by holdout
validation on alternate laser shots.
"""

from .coarse2fine import (
    CfResult,
    CfSchedule,
    CfStepResult,
    EtaGrid,
    adjusted_nll,
    compare_trajectories,
    half_columns,
    hist_sweep,
    make_schedule,
    rmse,
    run_cf,
    select_eta,
    validation_nll,
)
from .core import (
    AcquisitionSpec,
    CountImage,
    RateImage,
    Resolution,
    TimeTagStream,
    bin_time_tags,
    downsample_counts,
    mean_flux,
    snr,
    standard_estimate,
    upsample_rates,
)
from .errors import (
    ConfigError,
    DimensionError,
    DomainError,
    FitConvergenceError,
    InfiniteLikelihoodError,
    InsufficientDataError,
    ParseError,
    PtvError,
    SolverDivergenceError,
)
from .forward import (
    Background,
    PulseKernel,
    apply_adjoint,
    apply_forward,
    composed_nll,
    composed_nll_grad,
    estimate_background,
    pulse_contaminated_bins,
)
from .likelihood import (
    GaussianFit,
    GaussianParams,
    discrete_nll,
    discrete_nll_grad,
    fit_gaussian_mle,
    gauss_cum_integral,
    gaussian_time_tag_nll,
    moment_init,
    time_tag_nll,
)
from .simulate import (
    GaussianScene,
    RectPatch,
    RectPatchScene,
    ThinSplit,
    bernoulli_thin,
    binomial_split,
    eval_scene,
    manual_thin,
    random_patch_scene,
    sample_time_tags,
    scene_truth_image,
)
from .solver import SolverConfig, SolveTrace, bb_step, objective, spiral_solve
from .tv import TvConfig, fgp_prox, prox_objective, tv_norm

__version__ = "0.1.0"
