import os
import shlex
import sys
from pathlib import Path

import numpy as np
import pytest

from xmas_mitigator.attack_synth import AttackSpec, synth_perturb
from xmas_mitigator.classifier import ToyClassifier
from xmas_mitigator.config import get_settings
from xmas_mitigator.image_core import ImageBuffer, save_image

MOCK_CHILD = Path(__file__).with_name('mock_classifier.py')


@pytest.fixture(autouse=True)
def fresh_settings(monkeypatch):
    """Isolate every test from XMAS_* variables, .env files and the settings cache."""
    for name in list(os.environ):
        if name.startswith('XMAS_'):
            monkeypatch.delenv(name, raising=False)
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def mock_command():
    """Build a command line that launches the mock classifier child."""
    def build(*args: str) -> str:
        parts = [sys.executable, str(MOCK_CHILD), *args]
        return ' '.join(shlex.quote(p) for p in parts)
    return build


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_image(rng):
    def make(height=16, width=16, channels=1, integer=True):
        data = rng.uniform(0, 255, size=(height, width, channels))
        if integer:
            data = np.rint(data)
        return ImageBuffer(data)
    return make


@pytest.fixture
def adversarial():
    """Clean image plus a sign field; returns (clean, adversarial).

    ``base`` is either a constant sample value or a ready-made clean image.
    """
    def make(base, epsilon: float, seed: int, size: int = 32, mode: str = 'fast'):
        clean = base if isinstance(base, ImageBuffer) else ImageBuffer.constant(size, size, base)
        spec = AttackSpec(epsilon=epsilon, mode=mode, seed=seed)
        return clean, synth_perturb(clean, spec).image
    return make


@pytest.fixture
def ramp_image():
    """Horizontal ramp 64, 66, 68, ...; equals its 3x3 moving average away from the left and right edges."""
    def make(size: int = 32):
        row = 64.0 + 2.0 * np.arange(size)
        return ImageBuffer(np.tile(row, (size, 1)))
    return make


@pytest.fixture
def spike_image():
    """5x5 base 100 with a +9 spike in the center."""
    data = np.full((5, 5), 100.0)
    data[2, 2] = 109.0
    return ImageBuffer(data)


@pytest.fixture
def grid_image():
    """3x3 single-channel image holding 0..8 row-major."""
    return ImageBuffer(np.arange(9, dtype=np.float64).reshape(3, 3))


@pytest.fixture
def gallery_dir(tmp_path):
    """Gallery of three visually distinct 32x32 prototypes."""
    directory = tmp_path / 'gallery'
    directory.mkdir()
    save_image(ImageBuffer.constant(32, 32, 40), directory / 'dark.png')
    save_image(ImageBuffer.constant(32, 32, 100), directory / 'mid.png')
    checks = np.kron((np.indices((8, 8)).sum(axis=0) % 2) * 230.0, np.ones((4, 4)))
    save_image(ImageBuffer(checks), directory / 'checks.png')
    return directory


@pytest.fixture
def toy(gallery_dir):
    return ToyClassifier.from_directory(gallery_dir)
