"""
Soothing functions: filters applied to the mitigated image before it is
classified. JPEG encode/decode and the moving-average filter are provided.
"""
import io
import logging
from typing import Protocol, Union

import numpy as np
import PIL
from PIL import Image

from .exceptions import SoothingError
from .image_core import ImageBuffer, Kernel, parse_kernel_spec
from .models import EncoderSettings
from .moving_average import BorderMode, convolve_mean

logger = logging.getLogger('Soothing')

DEFAULT_JPEG_QUALITY = 20


class Soother(Protocol):
    name: str

    def __call__(self, img: ImageBuffer) -> ImageBuffer:
        ...


def encoder_settings(quality: int) -> EncoderSettings:
    """The fixed JPEG encoder configuration, recorded in run summaries."""
    return EncoderSettings(library=f"Pillow {PIL.__version__} (libjpeg)", quality=quality)


def _check_quality(quality: int) -> None:
    if not 1 <= quality <= 100:
        raise ValueError(f"JPEG quality must be in [1, 100], got {quality}")


def jpeg_bytes(img: ImageBuffer, quality: int = DEFAULT_JPEG_QUALITY) -> bytes:
    """Encode ``img`` as a baseline JPEG (4:4:4, no optimization)."""
    _check_quality(quality)
    data = img.to_uint8()
    pil = Image.fromarray(data[:, :, 0] if img.channels == 1 else data)
    buf = io.BytesIO()
    try:
        pil.save(buf, format='JPEG', quality=quality, subsampling=0,
                 optimize=False, progressive=False)
    except (OSError, ValueError) as e:
        raise SoothingError(f"JPEG encoding failed for {img.width}x{img.height} image: {e}") from e
    return buf.getvalue()


def jpeg_soothe(img: ImageBuffer, quality: int = DEFAULT_JPEG_QUALITY) -> ImageBuffer:
    """JPEG-encode at ``quality`` and decode again."""
    encoded = jpeg_bytes(img, quality)
    try:
        with Image.open(io.BytesIO(encoded)) as decoded:
            decoded.load()
            arr = np.asarray(decoded.convert('L' if img.channels == 1 else 'RGB'))
    except OSError as e:
        raise SoothingError(f"JPEG decoding failed: {e}") from e
    return ImageBuffer(arr)


def mean_soothe(img: ImageBuffer, kernel: Kernel,
                border: Union[str, BorderMode] = BorderMode.REPLICATE) -> ImageBuffer:
    """Moving-average filter; identical to ``convolve_mean``."""
    return convolve_mean(img, kernel, border)


class JpegSoother:
    def __init__(self, quality: int = DEFAULT_JPEG_QUALITY):
        _check_quality(quality)
        self.quality = quality
        self.name = f"jpeg:{quality}"

    def __call__(self, img: ImageBuffer) -> ImageBuffer:
        return jpeg_soothe(img, self.quality)


class MeanSoother:
    def __init__(self, kernel: Kernel, border: Union[str, BorderMode] = BorderMode.REPLICATE,
                 name: str = ''):
        self.kernel = kernel
        self.border = BorderMode.parse(border)
        self.name = name or f"mean:{kernel.size}"

    def __call__(self, img: ImageBuffer) -> ImageBuffer:
        return mean_soothe(img, self.kernel, self.border)


class IdentitySoother:
    name = 'none'

    def __call__(self, img: ImageBuffer) -> ImageBuffer:
        return img


def parse_soother(spec: str, border: Union[str, BorderMode] = BorderMode.REPLICATE) -> Soother:
    """Build a soother from ``jpeg:Q``, ``mean:N``, ``mean:<kernel spec>`` or ``none``."""
    kind, _, rest = spec.partition(':')
    if kind == 'none':
        return IdentitySoother()
    if kind == 'jpeg':
        try:
            quality = int(rest) if rest else DEFAULT_JPEG_QUALITY
        except ValueError as e:
            raise ValueError(f"malformed JPEG quality in '{spec}'") from e
        return JpegSoother(quality)
    if kind == 'mean' and rest:
        kernel = parse_kernel_spec(f"ones:{rest}" if rest.isdigit() else rest)
        return MeanSoother(kernel, border, name=spec)
    raise ValueError(f"unknown soother '{spec}' (expected jpeg:Q, mean:N or none)")
