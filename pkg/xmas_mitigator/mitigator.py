"""
Multi-level mitigation state machine.

Each step estimates the perturbation of the current image, applies the normalized
per-direction magnitude where the guard and the boundary allow it, soothes
the result and classifies it. The run stops once the last k-1 labels agree
or the step cap is reached. It also stops when the image has become a fixed
point.
"""
import csv
import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Deque, List, Optional, Tuple, Union

import numpy as np

from .classifier import Classifier, PredictionRecord
from .exceptions import ClassifierError, ImageIOError, SoothingError
from .estimator import Direction, EstimatedPerturbation, estimate
from .image_core import ImageBuffer, Kernel, PathLike
from .moving_average import BorderMode, convolve_mean
from .soothing import Soother

logger = logging.getLogger('Mitigator')

DEFAULT_K = 5
DEFAULT_MAX_STEPS = 100

TRACE_HEADER = ['step', 'label', 'confidence', 'mag_sub', 'mag_add', 'held']
TRACE_DETAIL_HEADER = TRACE_HEADER + ['applied_sub', 'applied_add', 'updated']


class StopReason(str, Enum):
    CONVERGED_PREDICTIONS = 'CONVERGED_PREDICTIONS'
    MAX_STEPS = 'MAX_STEPS'
    MAGNITUDE_STALL = 'MAGNITUDE_STALL'


@dataclass(frozen=True)
class StepOutcome:
    """What a single mitigation step did."""

    mag_subtract: float
    mag_add: float
    applied_subtract: bool = False
    applied_add: bool = False
    updated: int = 0
    held: int = 0


@dataclass(frozen=True, eq=False)
class MitigationState:
    """Mutable-by-replacement state of a run.

    ``boundary`` is the moving average of the original input and is fixed for the
    whole run unless boundary refresh is requested.
    """

    current: ImageBuffer
    boundary: ImageBuffer
    prev_magnitudes: Optional[Tuple[float, float]] = None
    ceilings: Tuple[float, float] = (math.inf, math.inf)
    step: int = 0
    held_samples_last_step: int = 0
    last_outcome: Optional[StepOutcome] = None

    @classmethod
    def initial(cls, image: ImageBuffer, kernel: Kernel,
                border: Union[str, BorderMode] = BorderMode.REPLICATE,
                round_boundary: bool = False) -> 'MitigationState':
        boundary = convolve_mean(image, kernel, border)
        if round_boundary:
            boundary = boundary.rounded()
        return cls(current=image, boundary=boundary)


@dataclass(frozen=True)
class StepRecord:
    step: int
    label: str
    confidence: float
    mag_subtract: float
    mag_add: float
    held: int
    applied_subtract: bool = False
    applied_add: bool = False
    updated: int = 0


@dataclass(frozen=True, eq=False)
class MitigationResult:
    final_image: ImageBuffer
    steps_run: int
    stop_reason: StopReason
    trace: List[StepRecord] = field(default_factory=list)

    @property
    def final_prediction(self) -> Optional[PredictionRecord]:
        if not self.trace:
            return None
        last = self.trace[-1]
        return PredictionRecord(last.label, last.confidence)


def _apply_direction(current: np.ndarray, boundary: np.ndarray, mask: np.ndarray,
                     magnitude: float, sign: int) -> Tuple[np.ndarray, int, int]:
    """Move masked samples by ``sign * magnitude`` where the result stays strictly
    on the legal side of the boundary. Returns (new samples, updated, held)."""
    candidate = current - sign * magnitude
    if sign > 0:
        legal = mask & (candidate > boundary)
    else:
        legal = mask & (candidate < boundary)
    out = np.where(legal, candidate, current)
    updated = int(np.count_nonzero(legal))
    return out, updated, int(np.count_nonzero(mask)) - updated


def mitigation_step(state: MitigationState, kernel: Kernel,
                    border: Union[str, BorderMode] = BorderMode.REPLICATE,
                    forced_magnitudes: Optional[Tuple[float, float]] = None,
                    refresh_boundary: bool = False,
                    round_result: bool = False) -> MitigationState:
    """Advance the state by one step.

    At step 0 only the estimate is taken. Afterwards each direction updates
    iff its magnitude does not exceed the previous step's magnitude nor the
    last magnitude applied in that direction; each sample then moves only if
    it stays strictly beyond its boundary value.

    ``forced_magnitudes`` overrides the applied (subtract, add) magnitudes
    while keeping the estimated directions.
    """
    est: EstimatedPerturbation = estimate(state.current, kernel, border)
    mags = est.magnitude_pair()
    boundary = state.boundary
    if refresh_boundary and state.step > 0:
        boundary = convolve_mean(state.current, kernel, border)

    if state.prev_magnitudes is None:
        outcome = StepOutcome(mags[0], mags[1])
        logger.debug(f"Step {state.step}: initial estimate sub={mags[0]:.4f} add={mags[1]:.4f}")
        return replace(state, prev_magnitudes=mags, step=state.step + 1,
                       held_samples_last_step=0, last_outcome=outcome)

    applied = forced_magnitudes if forced_magnitudes is not None else mags
    samples = state.current.samples
    ceilings = list(state.ceilings)
    updated_total = 0
    held_total = 0
    applied_flags = [False, False]

    for idx, (direction, sign) in enumerate(((Direction.SUBTRACT, 1), (Direction.ADD, -1))):
        mask = est.direction == direction
        if not mask.any():
            continue
        magnitude = mags[idx]
        if magnitude <= state.prev_magnitudes[idx] and magnitude <= ceilings[idx]:
            samples, updated, held = _apply_direction(
                samples, boundary.samples, mask, applied[idx], sign
            )
            if updated:
                applied_flags[idx] = True
                ceilings[idx] = magnitude
            updated_total += updated
            held_total += held
        else:
            held_total += int(np.count_nonzero(mask))

    current = ImageBuffer(samples)
    if round_result:
        current = current.rounded()
    outcome = StepOutcome(
        mag_subtract=mags[0],
        mag_add=mags[1],
        applied_subtract=applied_flags[0],
        applied_add=applied_flags[1],
        updated=updated_total,
        held=held_total,
    )
    logger.debug(
        f"Step {state.step}: sub={mags[0]:.4f} add={mags[1]:.4f} "
        f"updated={updated_total} held={held_total}"
    )
    return replace(
        state,
        current=current,
        boundary=boundary,
        prev_magnitudes=mags,
        ceilings=tuple(ceilings),
        step=state.step + 1,
        held_samples_last_step=held_total,
        last_outcome=outcome,
    )


def _labels_converged(ring: Deque[PredictionRecord], k: int) -> bool:
    if len(ring) < k - 1:
        return False
    recent = list(ring)[-(k - 1):]
    return all(p.label == recent[0].label for p in recent)


def run_mitigation(input_image: ImageBuffer, kernel: Kernel, k: int = DEFAULT_K,
                   max_steps: int = DEFAULT_MAX_STEPS,
                   soother: Optional[Soother] = None,
                   classifier: Optional[Classifier] = None,
                   border: Union[str, BorderMode] = BorderMode.REPLICATE,
                   stop_on_stall: bool = True,
                   refresh_boundary: bool = False,
                   round_between_steps: bool = False,
                   on_step: Optional[Callable[[MitigationState], None]] = None) -> MitigationResult:
    """Run the multi-level mitigation until a stop condition holds.

    Args:
        input_image: the (possibly adversarial) image
        kernel: moving-average kernel
        k: stop once the last k-1 predicted labels are equal
        max_steps: hard cap on the number of steps
        soother: filter applied before classification (identity if None)
        classifier: prediction backend (required)
        border: border policy of the moving average
        stop_on_stall: stop once two consecutive steps changed nothing
        refresh_boundary: recompute the boundary from the current image every step
        round_between_steps: round the boundary and every step result to integers
        on_step: callback receiving the state after each step

    Raises:
        ClassifierError: the classifier failed (the error carries the step)
        SoothingError: the soother failed (the error carries the step)
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if max_steps < 1:
        raise ValueError(f"max_steps must be >= 1, got {max_steps}")
    if classifier is None:
        raise ValueError("a classifier is required")
    border = BorderMode.parse(border)

    state = MitigationState.initial(input_image, kernel, border, round_boundary=round_between_steps)
    ring: Deque[PredictionRecord] = deque(maxlen=k)
    trace: List[StepRecord] = []
    idle_steps = 0
    stop_reason = StopReason.MAX_STEPS

    while state.step < max_steps:
        state = mitigation_step(state, kernel, border,
                                refresh_boundary=refresh_boundary,
                                round_result=round_between_steps)
        outcome = state.last_outcome
        step = state.step - 1
        try:
            view = soother(state.current) if soother is not None else state.current
        except SoothingError as e:
            raise e.at_step(step) from e
        except Exception as e:
            raise SoothingError(f"soother failed: {e}", step=step) from e
        try:
            prediction = classifier.predict(view)
        except ClassifierError as e:
            raise e.at_step(step) from e
        except Exception as e:
            raise ClassifierError(f"classifier failed: {e}", step=step) from e
        ring.append(prediction)
        trace.append(StepRecord(
            step=step,
            label=prediction.label,
            confidence=prediction.confidence,
            mag_subtract=outcome.mag_subtract,
            mag_add=outcome.mag_add,
            held=outcome.held,
            applied_subtract=outcome.applied_subtract,
            applied_add=outcome.applied_add,
            updated=outcome.updated,
        ))
        if on_step is not None:
            on_step(state)

        idle_steps = idle_steps + 1 if outcome.updated == 0 else 0
        if _labels_converged(ring, k):
            stop_reason = StopReason.CONVERGED_PREDICTIONS
            break
        if stop_on_stall and idle_steps >= 2:
            stop_reason = StopReason.MAGNITUDE_STALL
            break

    logger.info(
        f"Mitigation stopped after {len(trace)} steps ({stop_reason.value}), "
        f"final label {trace[-1].label}"
    )
    return MitigationResult(
        final_image=state.current,
        steps_run=len(trace),
        stop_reason=stop_reason,
        trace=trace,
    )


def single_level_mitigate(img: ImageBuffer, kernel: Kernel,
                          border: Union[str, BorderMode] = BorderMode.REPLICATE) -> ImageBuffer:
    """One guarded, boundary-checked mitigation from the original input."""
    state = MitigationState.initial(img, kernel, border)
    state = mitigation_step(state, kernel, border)
    return mitigation_step(state, kernel, border).current


def accuracy_curve(result: MitigationResult, detail: bool = False) -> List[List]:
    """Per-step rows (header order of ``TRACE_HEADER`` or ``TRACE_DETAIL_HEADER``)."""
    if not result.trace:
        raise ValueError("mitigation result has an empty trace")
    rows = []
    for rec in result.trace:
        row = [rec.step, rec.label, rec.confidence, rec.mag_subtract, rec.mag_add, rec.held]
        if detail:
            row += [int(rec.applied_subtract), int(rec.applied_add), rec.updated]
        rows.append(row)
    return rows


def write_trace_csv(result: MitigationResult, path: PathLike, detail: bool = False) -> None:
    try:
        with open(path, 'w', newline='', encoding='utf-8') as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_DETAIL_HEADER if detail else TRACE_HEADER)
            writer.writerows(accuracy_curve(result, detail))
    except OSError as e:
        raise ImageIOError(f"cannot write trace {path}: {e}") from e


def read_trace_csv(path: PathLike) -> List[List]:
    """Parse a trace CSV back into typed rows."""
    with open(Path(path), newline='', encoding='utf-8') as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = []
        for raw in reader:
            row = [int(raw[0]), raw[1], float(raw[2]), float(raw[3]), float(raw[4]), int(raw[5])]
            if len(header) > len(TRACE_HEADER):
                row += [int(v) for v in raw[6:]]
            rows.append(row)
    return rows
