"""
Prediction backends for the mitigation stopping rule.

Two backends are provided: a deterministic nearest-prototype toy classifier
and an adapter that talks to an external process over a line protocol:

    parent -> child:  <absolute-png-path>\\n
    child -> parent:  <label-token> <confidence-float>\\n
"""
import asyncio
import logging
import math
import os
import shlex
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from .exceptions import (
    ClassifierError,
    ClassifierTimeoutError,
    MalformedPredictionError,
)
from .image_core import ImageBuffer, load_image, save_image

logger = logging.getLogger('Classifier')

GRID = 8
GALLERY_SUFFIXES = ('.png', '.ppm', '.pgm')


@dataclass(frozen=True)
class PredictionRecord:
    """A classifier output: label and confidence in [0, 1]."""

    label: str
    confidence: float

    def __post_init__(self):
        if not self.label or any(c.isspace() for c in self.label):
            raise ValueError(f"label must be a nonempty token, got {self.label!r}")
        if not (0.0 <= self.confidence <= 1.0) or math.isnan(self.confidence):
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")


class Classifier(Protocol):
    name: str

    def predict(self, img: ImageBuffer) -> PredictionRecord:
        ...

    def close(self) -> None:
        ...


def downsample_grid(img: ImageBuffer, grid: int = GRID) -> np.ndarray:
    """Block-mean the channel-averaged image onto a grid×grid vector."""
    gray = img.samples.mean(axis=2)

    def bounds(length: int) -> List[Tuple[int, int]]:
        out = []
        for i in range(grid):
            start = (i * length) // grid
            stop = max(((i + 1) * length) // grid, start + 1)
            out.append((min(start, length - 1), min(stop, length)))
        return out

    cells = np.empty((grid, grid), dtype=np.float64)
    for gi, (r0, r1) in enumerate(bounds(img.height)):
        for gj, (c0, c1) in enumerate(bounds(img.width)):
            cells[gi, gj] = gray[r0:r1, c0:c1].mean()
    return cells.ravel()


class ToyClassifier:
    """Nearest-prototype classifier over an 8×8 grayscale block-mean vector.

    Distances are Euclidean, scaled to [0, 1]; confidence is the softmin of
    the scaled distances. Ties resolve to the earliest gallery entry.
    """

    def __init__(self, gallery: Sequence[Tuple[str, ImageBuffer]], temperature: float = 0.05,
                 name: str = 'toy'):
        if not gallery:
            raise ClassifierError("gallery is empty")
        if temperature <= 0:
            raise ValueError(f"temperature must be positive, got {temperature}")
        self.labels = [label for label, _ in gallery]
        for label in self.labels:
            PredictionRecord(label, 0.0)
        self.prototypes = np.stack([downsample_grid(img) for _, img in gallery])
        self.temperature = temperature
        self.name = name

    @classmethod
    def from_directory(cls, directory: Union[str, os.PathLike], temperature: float = 0.05) -> 'ToyClassifier':
        """Load every PNG/PPM/PGM in ``directory``; the file stem is the label."""
        return cls(load_gallery(directory), temperature, name=f"toy:{directory}")

    def distances(self, img: ImageBuffer) -> np.ndarray:
        query = downsample_grid(img)
        return np.linalg.norm(self.prototypes - query, axis=1) / (255.0 * GRID)

    def predict(self, img: ImageBuffer) -> PredictionRecord:
        d = self.distances(img)
        best = int(np.argmin(d))
        weights = np.exp(-(d - d[best]) / self.temperature)
        confidence = float(weights[best] / weights.sum())
        return PredictionRecord(self.labels[best], min(max(confidence, 0.0), 1.0))

    def close(self) -> None:
        pass


def load_gallery(directory: Union[str, os.PathLike]) -> List[Tuple[str, ImageBuffer]]:
    directory = Path(directory)
    if not directory.is_dir():
        raise ClassifierError(f"gallery directory not found: {directory}")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in GALLERY_SUFFIXES)
    if not files:
        raise ClassifierError(f"gallery is empty: {directory}")
    logger.info(f"Loaded gallery of {len(files)} prototypes from {directory}")
    return [(p.stem, load_image(p)) for p in files]


def toy_predict(img: ImageBuffer, gallery: Sequence[Tuple[str, ImageBuffer]],
                temperature: float = 0.05) -> PredictionRecord:
    return ToyClassifier(gallery, temperature).predict(img)


def parse_prediction_line(line: str) -> PredictionRecord:
    """Parse ``"<label> <confidence>"``; confidence is only range-checked."""
    parts = line.strip().split()
    if len(parts) != 2:
        raise MalformedPredictionError(f"expected '<label> <confidence>', got {line.strip()!r}")
    label, raw = parts
    try:
        confidence = float(raw)
    except ValueError as e:
        raise MalformedPredictionError(f"confidence is not a number: {raw!r}") from e
    if not 0.0 <= confidence <= 1.0:
        raise MalformedPredictionError(f"confidence {confidence} outside [0, 1]")
    return PredictionRecord(label, confidence)


class ExternalClassifier:
    """Adapter for a long-running child process speaking the line protocol.

    One request is in flight at a time. The child is started on first use and
    stopped by ``close()``.
    """

    def __init__(self, command: Union[str, Sequence[str]], timeout: float = 30.0):
        self.argv = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.argv:
            raise ClassifierError("empty classifier command")
        self.timeout = timeout
        self.name = f"cmd:{command if isinstance(command, str) else shlex.join(command)}"
        self._loop = asyncio.new_event_loop()
        self._proc: Optional[asyncio.subprocess.Process] = None
        self._lock = threading.Lock()

    async def _start(self) -> asyncio.subprocess.Process:
        if self._proc is None or self._proc.returncode is not None:
            try:
                self._proc = await asyncio.create_subprocess_exec(
                    *self.argv,
                    stdin=asyncio.subprocess.PIPE,
                    stdout=asyncio.subprocess.PIPE,
                )
            except OSError as e:
                raise ClassifierError(f"cannot launch classifier {self.argv[0]!r}: {e}") from e
            logger.debug(f"Started classifier child pid={self._proc.pid}")
        return self._proc

    async def _request(self, path: str) -> PredictionRecord:
        proc = await self._start()
        try:
            proc.stdin.write(f"{path}\n".encode('utf-8'))
            await proc.stdin.drain()
            line = await asyncio.wait_for(proc.stdout.readline(), timeout=self.timeout)
        except asyncio.TimeoutError as e:
            await self._kill()
            raise ClassifierTimeoutError(
                f"classifier did not answer within {self.timeout:g} s"
            ) from e
        except (BrokenPipeError, ConnectionResetError) as e:
            await self._kill()
            raise ClassifierError(f"classifier process closed its input: {e}") from e
        if not line:
            code = await proc.wait()
            self._proc = None
            raise ClassifierError(f"classifier process exited with code {code}")
        return parse_prediction_line(line.decode('utf-8'))

    async def _kill(self) -> None:
        proc, self._proc = self._proc, None
        if proc is not None and proc.returncode is None:
            proc.kill()
            await proc.wait()

    def predict(self, img: ImageBuffer) -> PredictionRecord:
        with self._lock:
            fd, tmp = tempfile.mkstemp(suffix='.png', prefix='xmas-')
            os.close(fd)
            try:
                save_image(img, tmp)
                return self._loop.run_until_complete(self._request(os.path.abspath(tmp)))
            finally:
                try:
                    os.remove(tmp)
                except OSError:
                    pass

    async def _shutdown(self) -> None:
        proc = self._proc
        if proc is None or proc.returncode is not None:
            return
        try:
            proc.stdin.close()
            await asyncio.wait_for(proc.wait(), timeout=5.0)
        except (asyncio.TimeoutError, BrokenPipeError, ConnectionResetError):
            await self._kill()
        self._proc = None

    def close(self) -> None:
        with self._lock:
            if self._loop.is_closed():
                return
            self._loop.run_until_complete(self._shutdown())
            self._loop.close()

    def __enter__(self) -> 'ExternalClassifier':
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def external_predict(img: ImageBuffer, endpoint: Union[str, Sequence[str]],
                     timeout: float = 30.0) -> PredictionRecord:
    """One-shot prediction through a freshly launched child."""
    with ExternalClassifier(endpoint, timeout) as clf:
        return clf.predict(img)


def parse_classifier(spec: str, timeout: float = 30.0, temperature: float = 0.05) -> Classifier:
    """Build a classifier from ``toy:<gallery-dir>`` or ``cmd:<command>``."""
    kind, _, rest = spec.partition(':')
    if kind == 'toy' and rest:
        return ToyClassifier.from_directory(rest, temperature)
    if kind == 'cmd' and rest:
        return ExternalClassifier(rest, timeout)
    raise ValueError(f"unknown classifier '{spec}' (expected toy:<dir> or cmd:<command>)")
