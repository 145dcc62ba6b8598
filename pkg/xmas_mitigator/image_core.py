"""
Image and kernel domain types, file I/O and sample arithmetic.

Samples are kept as 64-bit reals in [0, 255]. Rounding to 8 bits happens only
when an image is written to disk.
"""
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from .exceptions import (
    DimensionMismatchError,
    ImageFormatError,
    ImageIOError,
    KernelFormatError,
)

logger = logging.getLogger('ImageCore')

PathLike = Union[str, os.PathLike]

SAMPLE_MIN = 0.0
SAMPLE_MAX = 255.0

# Extension -> Pillow format name. PGM and PPM share Pillow's PPM plugin.
_WRITE_FORMATS = {
    '.png': 'PNG',
    '.ppm': 'PPM',
    '.pgm': 'PPM',
    '.pnm': 'PPM',
}


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """An H×W×C grid of real samples in [0, 255] (C is 1 or 3)."""

    samples: np.ndarray

    def __post_init__(self):
        arr = np.array(self.samples, dtype=np.float64, copy=True)
        if arr.ndim == 2:
            arr = arr[:, :, np.newaxis]
        if arr.ndim != 3:
            raise ImageFormatError(f"expected an H×W×C sample grid, got shape {arr.shape}")
        height, width, channels = arr.shape
        if height < 1 or width < 1:
            raise ImageFormatError(f"zero-dimension image ({width}x{height})")
        if channels not in (1, 3):
            raise ImageFormatError(f"unsupported channel count {channels}")
        if not np.all(np.isfinite(arr)):
            raise ImageFormatError("samples must be finite")
        if arr.min() < SAMPLE_MIN or arr.max() > SAMPLE_MAX:
            raise ImageFormatError(
                f"samples outside [0, 255]: min={arr.min()}, max={arr.max()}"
            )
        arr.setflags(write=False)
        object.__setattr__(self, 'samples', arr)

    @classmethod
    def from_array(cls, arr: np.ndarray, clip: bool = False) -> 'ImageBuffer':
        """Build an image from an array, optionally clamping to [0, 255] first."""
        arr = np.asarray(arr, dtype=np.float64)
        if clip:
            arr = np.clip(arr, SAMPLE_MIN, SAMPLE_MAX)
        return cls(arr)

    @classmethod
    def constant(cls, height: int, width: int, value: float, channels: int = 1) -> 'ImageBuffer':
        return cls(np.full((height, width, channels), float(value)))

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def channels(self) -> int:
        return self.samples.shape[2]

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.samples.shape

    def to_uint8(self) -> np.ndarray:
        """Round and clamp to 8-bit samples (H×W×C)."""
        return np.clip(np.rint(self.samples), 0, 255).astype(np.uint8)

    def rounded(self) -> 'ImageBuffer':
        return ImageBuffer(self.to_uint8())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.samples, other.samples))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Kernel:
    """An N×N grid of nonnegative moving-average coefficients (N odd)."""

    coefficients: np.ndarray

    def __post_init__(self):
        coeffs = np.array(self.coefficients, dtype=np.float64, copy=True)
        if coeffs.ndim != 2 or coeffs.shape[0] != coeffs.shape[1]:
            raise KernelFormatError(f"kernel must be square, got shape {coeffs.shape}")
        size = coeffs.shape[0]
        if size < 1 or size % 2 == 0:
            raise KernelFormatError(f"kernel size must be odd and >= 1, got {size}")
        if not np.all(np.isfinite(coeffs)):
            raise KernelFormatError("kernel coefficients must be finite")
        if np.any(coeffs < 0):
            raise KernelFormatError("kernel coefficients must be nonnegative")
        if coeffs.sum() <= 0:
            raise KernelFormatError("kernel weight sum must be positive")
        coeffs.setflags(write=False)
        object.__setattr__(self, 'coefficients', coeffs)

    @property
    def size(self) -> int:
        return self.coefficients.shape[0]

    @property
    def radius(self) -> int:
        return self.size // 2

    @property
    def weight_sum(self) -> float:
        return float(self.coefficients.sum())

    @classmethod
    def ones(cls, size: int) -> 'Kernel':
        """All-ones N×N kernel (plain mean filter)."""
        return cls(np.ones((size, size)))

    @classmethod
    def centered(cls, size: int, inner: int) -> 'Kernel':
        """N×N zeros with a centered M×M block of ones."""
        if inner < 1 or inner % 2 == 0 or inner > size:
            raise KernelFormatError(f"inner block must be odd and <= {size}, got {inner}")
        if size % 2 == 0:
            raise KernelFormatError(f"kernel size must be odd, got {size}")
        coeffs = np.zeros((size, size))
        lo = (size - inner) // 2
        coeffs[lo:lo + inner, lo:lo + inner] = 1.0
        return cls(coeffs)

    @classmethod
    def center_weighted(cls, size: int, weight: float) -> 'Kernel':
        """All-ones N×N kernel whose centroid coefficient is ``weight``."""
        if weight <= 0:
            raise KernelFormatError(f"centroid weight must be positive, got {weight}")
        if size < 1 or size % 2 == 0:
            raise KernelFormatError(f"kernel size must be odd, got {size}")
        coeffs = np.ones((size, size))
        coeffs[size // 2, size // 2] = float(weight)
        return cls(coeffs)

    def describe(self) -> str:
        return f"{self.size}x{self.size} (weight sum {self.weight_sum:g})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Kernel):
            return NotImplemented
        return bool(np.array_equal(self.coefficients, other.coefficients))

    __hash__ = None


def _ppm_magic(path: Path) -> bytes:
    with open(path, 'rb') as fh:
        return fh.read(2)


def load_image(path: PathLike) -> ImageBuffer:
    """Load a PNG or binary PPM (P6) / PGM (P5) file.

    Palette and grayscale-alpha sources are expanded; alpha is dropped.

    Raises:
        ImageFormatError: unreadable, truncated, unsupported or empty file
    """
    path = Path(path)
    try:
        with Image.open(path) as img:
            fmt = img.format
            if fmt not in ('PNG', 'PPM'):
                raise ImageFormatError(f"{path}: unsupported format {fmt}")
            if fmt == 'PPM' and _ppm_magic(path) not in (b'P5', b'P6'):
                raise ImageFormatError(f"{path}: only binary PPM (P6) and PGM (P5) are supported")
            img.load()
            mode = img.mode
            if mode in ('I', 'I;16', 'I;16B', 'F'):
                raise ImageFormatError(f"{path}: {mode} images are not supported (8-bit only)")
            if mode in ('L', '1', 'LA'):
                arr = np.asarray(img.convert('L'))
            else:
                arr = np.asarray(img.convert('RGB'))
    except ImageFormatError:
        raise
    except FileNotFoundError as e:
        raise ImageFormatError(f"{path}: file not found") from e
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as e:
        raise ImageFormatError(f"{path}: unreadable image ({e})") from e

    logger.debug(f"Loaded {path} ({arr.shape[1]}x{arr.shape[0]}, mode {mode})")
    return ImageBuffer(arr)


def save_image(img: ImageBuffer, path: PathLike) -> None:
    """Write ``img`` losslessly as PNG, PPM or PGM (chosen by extension).

    Samples are rounded to the nearest integer and clamped to [0, 255].

    Raises:
        ImageFormatError: unknown extension
        ImageIOError: the file could not be written
    """
    path = Path(path)
    fmt = _WRITE_FORMATS.get(path.suffix.lower())
    if fmt is None:
        raise ImageFormatError(f"{path}: unsupported output extension '{path.suffix}'")
    data = img.to_uint8()
    if img.channels == 1:
        pil = Image.fromarray(data[:, :, 0])
    else:
        pil = Image.fromarray(data)
    try:
        pil.save(path, format=fmt)
    except OSError as e:
        raise ImageIOError(f"cannot write {path}: {e}") from e
    logger.debug(f"Saved {path}")


def parse_kernel_text(text: str) -> Kernel:
    """Parse the kernel text format: N followed by N² coefficients, row-major."""
    tokens = text.split()
    if not tokens:
        raise KernelFormatError("empty kernel specification")
    try:
        size = int(tokens[0])
    except ValueError as e:
        raise KernelFormatError(f"kernel size must be an integer, got '{tokens[0]}'") from e
    if size < 1 or size % 2 == 0:
        raise KernelFormatError(f"kernel size must be odd and >= 1, got {size}")
    if len(tokens) != size * size + 1:
        raise KernelFormatError(
            f"expected {size * size} coefficients for a {size}x{size} kernel, "
            f"got {len(tokens) - 1}"
        )
    try:
        values = [float(t) for t in tokens[1:]]
    except ValueError as e:
        raise KernelFormatError(f"non-numeric coefficient: {e}") from e
    return Kernel(np.array(values).reshape(size, size))


def load_kernel(path: PathLike) -> Kernel:
    """Load a kernel file (see ``parse_kernel_text``)."""
    try:
        text = Path(path).read_text(encoding='utf-8')
    except OSError as e:
        raise KernelFormatError(f"cannot read kernel file {path}: {e}") from e
    return parse_kernel_text(text)


def save_kernel(kernel: Kernel, path: PathLike) -> None:
    rows = [' '.join(f"{c:g}" for c in row) for row in kernel.coefficients]
    try:
        Path(path).write_text(f"{kernel.size}\n" + '\n'.join(rows) + '\n', encoding='utf-8')
    except OSError as e:
        raise ImageIOError(f"cannot write kernel file {path}: {e}") from e


def parse_kernel_spec(spec: str) -> Kernel:
    """Resolve a kernel shorthand or file path.

    Accepted forms:
        ones:N        all-ones N×N
        center:N:M    N×N zeros with a centered M×M block of ones
        weighted:N:W  all-ones N×N with centroid coefficient W
        <path>        kernel text file
    """
    kind, _, rest = spec.partition(':')
    try:
        if kind == 'ones' and rest:
            return Kernel.ones(int(rest))
        if kind == 'center' and rest:
            size, inner = rest.split(':')
            return Kernel.centered(int(size), int(inner))
        if kind == 'weighted' and rest:
            size, weight = rest.split(':')
            return Kernel.center_weighted(int(size), float(weight))
    except ValueError as e:
        if isinstance(e, KernelFormatError):
            raise
        raise KernelFormatError(f"malformed kernel shorthand '{spec}'") from e
    return load_kernel(spec)


def check_same_shape(a: ImageBuffer, b: ImageBuffer) -> None:
    if a.shape != b.shape:
        raise DimensionMismatchError(f"image shapes differ: {a.shape} vs {b.shape}")


def linf_distance(a: ImageBuffer, b: ImageBuffer) -> float:
    """Maximum absolute per-sample difference."""
    check_same_shape(a, b)
    return float(np.max(np.abs(a.samples - b.samples)))


def mean_abs_distance(a: ImageBuffer, b: ImageBuffer) -> float:
    """Mean absolute per-sample difference."""
    check_same_shape(a, b)
    return float(np.mean(np.abs(a.samples - b.samples)))
