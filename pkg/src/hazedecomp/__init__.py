"""Haze synthesis from clear images and range maps, per-image decomposition
of hazy images into range, airlight and visibility, depth-error metrics, and
visibility-to-PM2.5 calibration."""

from .decompose import DecomposeMode, DecomposeResult, SolverConfig, coarse_init, decompose
from .errors import (
    DegenerateDecompositionError,
    DomainError,
    HazeError,
    IngestionError,
    InputError,
    LowTransmissionError,
    NoValidPixelsError,
    ShapeError,
    SingularFitError,
)
from .geometry import CameraIntrinsics, depth_to_range, range_to_depth
from .gradcheck import GradCheckConfig, gradient_check
from .losses import LossBreakdown, LossWeights, photometric_theta, ssim, total_loss
from .metrics import DepthEvalConfig, DepthEvalReport, eval_depth, eval_scalar
from .pm25 import Pm25Model, Pm25Sample, fit_pm25, predict_pm25, stratified_fit
from .scattering import (
    DEFAULT_EPSILON,
    AirlightFamily,
    ScatteringParams,
    contrast_map,
    extinction_coefficient,
    invert_haze,
    sample_airlight,
    synthesize_haze,
    transmission_map,
)

__version__ = "0.1.0"
