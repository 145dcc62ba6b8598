"""
Perturbation estimation from the difference between an image and its moving average.

The per-sample sign of the raw difference decides the mitigation direction;
the magnitudes are normalized into two global scalars, the mean positive
difference (to subtract) and the mean absolute negative difference (to add).
"""
import logging
from dataclasses import dataclass
from enum import IntEnum
from typing import Tuple, Union

import numpy as np

from .image_core import ImageBuffer, Kernel
from .models import MagnitudeReport
from .moving_average import BorderMode, convolve_mean

logger = logging.getLogger('Estimator')


class Direction(IntEnum):
    """Per-sample mitigation direction (stored as the sign of the raw difference)."""

    ADD = -1
    NONE = 0
    SUBTRACT = 1


@dataclass(frozen=True, eq=False)
class EstimatedPerturbation:
    """The estimated perturbation of one mitigation step."""

    direction: np.ndarray
    mag_subtract: float
    mag_add: float
    raw_diff: np.ndarray

    @property
    def subtract_count(self) -> int:
        return int(np.count_nonzero(self.direction == Direction.SUBTRACT))

    @property
    def add_count(self) -> int:
        return int(np.count_nonzero(self.direction == Direction.ADD))

    def magnitude_pair(self) -> Tuple[float, float]:
        return magnitude_pair(self)

    def to_report(self) -> MagnitudeReport:
        return MagnitudeReport(
            mag_subtract=self.mag_subtract,
            mag_add=self.mag_add,
            subtract_samples=self.subtract_count,
            add_samples=self.add_count,
            none_samples=int(self.direction.size) - self.subtract_count - self.add_count,
            max_abs_diff=float(np.max(np.abs(self.raw_diff))),
        )

    def heat_image(self) -> ImageBuffer:
        """Grayscale view of the raw difference: 128 is zero, extremes map to 0/255."""
        diff = self.raw_diff.mean(axis=2)
        peak = float(np.max(np.abs(diff)))
        if peak == 0:
            return ImageBuffer(np.full(diff.shape, 128.0))
        return ImageBuffer(np.clip(127.5 + diff / peak * 127.5, 0, 255))


def estimate(img: ImageBuffer, kernel: Kernel,
             border: Union[str, BorderMode] = BorderMode.REPLICATE) -> EstimatedPerturbation:
    """Estimate the perturbation of ``img`` under ``kernel``."""
    local = convolve_mean(img, kernel, border)
    raw = img.samples - local.samples
    direction = np.sign(raw).astype(np.int8)

    positive = raw[raw > 0]
    negative = raw[raw < 0]
    mag_subtract = float(positive.mean()) if positive.size else 0.0
    mag_add = float(-negative.mean()) if negative.size else 0.0

    raw.setflags(write=False)
    direction.setflags(write=False)
    logger.debug(
        f"Estimated perturbation: subtract {mag_subtract:.4f} over {positive.size} samples, "
        f"add {mag_add:.4f} over {negative.size} samples"
    )
    return EstimatedPerturbation(
        direction=direction,
        mag_subtract=mag_subtract,
        mag_add=mag_add,
        raw_diff=raw,
    )


def magnitude_pair(e: EstimatedPerturbation) -> Tuple[float, float]:
    """The (subtract, add) magnitudes compared between consecutive steps."""
    return e.mag_subtract, e.mag_add
