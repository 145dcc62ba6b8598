"""
xmas-mitigator - mitigation of adversarial perturbations on images

Estimates the perturbation of an image from its difference to its own moving
average, removes it in a boundary-constrained multi-level loop, and soothes
the result before classification.
"""

__version__ = "0.1.0"
__license__ = "MIT"

from .classifier import ExternalClassifier, PredictionRecord, ToyClassifier
from .estimator import Direction, EstimatedPerturbation, estimate, magnitude_pair
from .image_core import (
    ImageBuffer,
    Kernel,
    linf_distance,
    load_image,
    load_kernel,
    parse_kernel_spec,
    save_image,
)
from .mitigator import (
    MitigationResult,
    MitigationState,
    StopReason,
    accuracy_curve,
    mitigation_step,
    run_mitigation,
)
from .moving_average import BorderMode, convolve_mean, local_mean_at
from .soothing import jpeg_soothe, mean_soothe

__all__ = [
    'BorderMode',
    'Direction',
    'EstimatedPerturbation',
    'ExternalClassifier',
    'ImageBuffer',
    'Kernel',
    'MitigationResult',
    'MitigationState',
    'PredictionRecord',
    'StopReason',
    'ToyClassifier',
    'accuracy_curve',
    'convolve_mean',
    'estimate',
    'jpeg_soothe',
    'linf_distance',
    'load_image',
    'load_kernel',
    'local_mean_at',
    'magnitude_pair',
    'mean_soothe',
    'mitigation_step',
    'parse_kernel_spec',
    'run_mitigation',
    'save_image',
    '__version__',
]
