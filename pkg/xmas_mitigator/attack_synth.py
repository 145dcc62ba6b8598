"""
Synthetic FGSM-family perturbations and out-of-bound sample statistics.

Perturbations follow the sign model: every sample independently draws
-ε, 0 or +ε with probability 1/3. No network gradients are involved, so the
ground-truth perturbation is known exactly.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict

import numpy as np

from .image_core import ImageBuffer, SAMPLE_MAX, SAMPLE_MIN
from .models import SaturationReport

logger = logging.getLogger('AttackSynth')

PRNG_ALGORITHM = 'numpy.random.PCG64'


class AttackMode(str, Enum):
    FAST_UNCLIPPED = 'fast'
    ITERATIVE_CLIPPED = 'iterative'


@dataclass(frozen=True)
class AttackSpec:
    """Parameters of a synthetic attack."""

    epsilon: float
    mode: AttackMode = AttackMode.FAST_UNCLIPPED
    iterations: int = 10
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'mode', AttackMode(self.mode))
        if not 0 <= self.epsilon <= 255:
            raise ValueError(f"epsilon must be in [0, 255], got {self.epsilon}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")


@dataclass(frozen=True, eq=False)
class AttackResult:
    """The perturbed image and the perturbation actually applied to it."""

    image: ImageBuffer
    delta: np.ndarray


@dataclass(frozen=True)
class SaturationStats:
    """Counts of fully black / fully white pixels plus the sample histogram."""

    width: int
    height: int
    channels: int
    black_tuples: int
    white_tuples: int
    histogram: Dict[int, int]

    def to_report(self) -> SaturationReport:
        return SaturationReport(
            width=self.width,
            height=self.height,
            channels=self.channels,
            black_tuples=self.black_tuples,
            white_tuples=self.white_tuples,
            histogram=self.histogram,
        )

    @property
    def saturated_tuples(self) -> int:
        return self.black_tuples + self.white_tuples


def draw_signs(rng: np.random.Generator, shape) -> np.ndarray:
    """Per-sample signs uniformly from {-1, 0, +1}."""
    return rng.integers(-1, 2, size=shape).astype(np.float64)


def synth_perturb(clean: ImageBuffer, spec: AttackSpec) -> AttackResult:
    """Perturb ``clean`` according to ``spec``; reproducible for a fixed seed.

    FAST_UNCLIPPED adds one ±ε/0 field and clamps to [0, 255]. ITERATIVE_CLIPPED
    takes ``iterations`` steps of size ε/iterations with a fresh sign field
    each step, clamping every step to the clean±ε tube inside [0, 255].
    """
    rng = np.random.default_rng(spec.seed)
    x = clean.samples
    if spec.epsilon == 0:
        return AttackResult(clean, np.zeros(clean.shape))

    if spec.mode is AttackMode.FAST_UNCLIPPED:
        adv = np.clip(x + spec.epsilon * draw_signs(rng, x.shape), SAMPLE_MIN, SAMPLE_MAX)
    else:
        lower = np.maximum(SAMPLE_MIN, x - spec.epsilon)
        upper = np.minimum(SAMPLE_MAX, x + spec.epsilon)
        step = spec.epsilon / spec.iterations
        adv = x.copy()
        for _ in range(spec.iterations):
            adv = np.clip(adv + step * draw_signs(rng, x.shape), lower, upper)

    logger.debug(f"Synthesized {spec.mode.value} attack, ε={spec.epsilon:g}, seed={spec.seed}")
    return AttackResult(ImageBuffer(adv), adv - x)


def saturation_stats(img: ImageBuffer) -> SaturationStats:
    """Histogram and (0,…,0) / (255,…,255) pixel counts of the rounded image."""
    data = img.to_uint8()
    black = int(np.count_nonzero(np.all(data == 0, axis=2)))
    white = int(np.count_nonzero(np.all(data == 255, axis=2)))
    counts = np.bincount(data.ravel(), minlength=256)
    histogram = {int(v): int(c) for v, c in enumerate(counts) if c}
    return SaturationStats(
        width=img.width,
        height=img.height,
        channels=img.channels,
        black_tuples=black,
        white_tuples=white,
        histogram=histogram,
    )
