"""
Normalized weighted moving-average convolution.

Each output sample is the coefficient-weighted sum over the N×N window divided
by the kernel weight sum. Channels are filtered independently. The window sum
is always accumulated row-major over the kernel so every code path (whole
image, single position) produces bit-identical results.
"""
import logging
from enum import Enum
from typing import Union

import numpy as np

from .image_core import SAMPLE_MAX, SAMPLE_MIN, ImageBuffer, Kernel

logger = logging.getLogger('MovingAverage')


class BorderMode(str, Enum):
    """How out-of-frame window positions are filled."""

    REPLICATE = 'replicate'
    REFLECT = 'reflect'

    @classmethod
    def parse(cls, value: Union[str, 'BorderMode']) -> 'BorderMode':
        return value if isinstance(value, cls) else cls(str(value).lower())


def border_indices(positions: np.ndarray, length: int, border: BorderMode) -> np.ndarray:
    """Map possibly out-of-frame indices onto [0, length)."""
    positions = np.asarray(positions)
    if border is BorderMode.REPLICATE:
        return np.clip(positions, 0, length - 1)
    # Mirror including the edge sample: -1 -> 0, length -> length - 1.
    period = 2 * length
    wrapped = np.mod(positions, period)
    return np.where(wrapped >= length, period - 1 - wrapped, wrapped)


def convolve_mean(img: ImageBuffer, kernel: Kernel,
                  border: Union[str, BorderMode] = BorderMode.REPLICATE) -> ImageBuffer:
    """Return the moving average of ``img`` with the given border policy.

    Output dimensions equal input dimensions and every output sample lies in
    [min(img), max(img)].
    """
    border = BorderMode.parse(border)
    r = kernel.radius
    rows = border_indices(np.arange(-r, img.height + r), img.height, border)
    cols = border_indices(np.arange(-r, img.width + r), img.width, border)
    padded = img.samples[np.ix_(rows, cols)]

    acc = np.zeros(img.shape, dtype=np.float64)
    coeffs = kernel.coefficients
    for i in range(kernel.size):
        for j in range(kernel.size):
            acc += coeffs[i, j] * padded[i:i + img.height, j:j + img.width, :]
    out = acc / kernel.weight_sum
    return ImageBuffer(np.clip(out, SAMPLE_MIN, SAMPLE_MAX))


def local_mean_at(img: ImageBuffer, kernel: Kernel, row: int, col: int, channel: int,
                  border: Union[str, BorderMode] = BorderMode.REPLICATE) -> float:
    """The moving average of ``img`` at a single position; equals ``convolve_mean`` there."""
    if not (0 <= row < img.height and 0 <= col < img.width and 0 <= channel < img.channels):
        raise IndexError(
            f"position ({row}, {col}, {channel}) outside {img.height}x{img.width}x{img.channels}"
        )
    border = BorderMode.parse(border)
    r = kernel.radius
    rows = border_indices(np.arange(row - r, row + r + 1), img.height, border)
    cols = border_indices(np.arange(col - r, col + r + 1), img.width, border)
    samples = img.samples
    coeffs = kernel.coefficients

    acc = np.float64(0.0)
    for i in range(kernel.size):
        for j in range(kernel.size):
            acc += coeffs[i, j] * samples[rows[i], cols[j], channel]
    return float(min(max(acc / kernel.weight_sum, SAMPLE_MIN), SAMPLE_MAX))
