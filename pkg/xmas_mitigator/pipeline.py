"""
End-to-end mitigation jobs: load, mitigate, write image, trace and summary.

Shared by the ``mitigate`` command, the batch runner and the kernel sweep.
"""
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, List, Optional, Sequence

from . import __version__
from .attack_synth import PRNG_ALGORITHM
from .classifier import Classifier
from .exceptions import ImageIOError
from .image_core import (
    ImageBuffer,
    Kernel,
    PathLike,
    linf_distance,
    load_image,
    mean_abs_distance,
    parse_kernel_spec,
    save_image,
)
from .mitigator import MitigationResult, run_mitigation, write_trace_csv
from .models import RunSummary, SweepRow
from .moving_average import BorderMode
from .soothing import JpegSoother, Soother, encoder_settings

logger = logging.getLogger('Pipeline')

ClassifierFactory = Callable[[], Classifier]


@dataclass(frozen=True)
class MitigationJob:
    """Run parameters shared by every image of a job."""

    kernel: Kernel
    kernel_spec: str
    soother: Soother
    classifier_spec: str
    k: int = 5
    max_steps: int = 100
    border: BorderMode = BorderMode.REPLICATE
    stop_on_stall: bool = True
    refresh_boundary: bool = False
    round_between_steps: bool = False
    trace_detail: bool = False

    def run(self, image: ImageBuffer, classifier: Classifier) -> MitigationResult:
        return run_mitigation(
            image, self.kernel,
            k=self.k,
            max_steps=self.max_steps,
            soother=self.soother,
            classifier=classifier,
            border=self.border,
            stop_on_stall=self.stop_on_stall,
            refresh_boundary=self.refresh_boundary,
            round_between_steps=self.round_between_steps,
        )

    def summarize(self, result: MitigationResult, input_path: PathLike,
                  output_path: Optional[PathLike] = None) -> RunSummary:
        final = result.final_prediction
        encoder = None
        if isinstance(self.soother, JpegSoother):
            encoder = encoder_settings(self.soother.quality)
        return RunSummary(
            version=__version__,
            input=str(input_path),
            output=str(output_path) if output_path is not None else None,
            kernel=self.kernel_spec,
            kernel_coefficients=self.kernel.coefficients.tolist(),
            border=self.border.value,
            k=self.k,
            max_steps=self.max_steps,
            soother=self.soother.name,
            classifier=self.classifier_spec,
            refresh_boundary=self.refresh_boundary,
            round_between_steps=self.round_between_steps,
            stop_on_stall=self.stop_on_stall,
            stop_reason=result.stop_reason.value,
            steps_run=result.steps_run,
            final_label=final.label if final else None,
            final_confidence=final.confidence if final else None,
            encoder=encoder,
            prng=PRNG_ALGORITHM,
        )


def write_summary(summary: RunSummary, path: PathLike) -> None:
    try:
        Path(path).write_text(summary.model_dump_json(indent=2) + '\n', encoding='utf-8')
    except OSError as e:
        raise ImageIOError(f"cannot write summary {path}: {e}") from e


def run_file(job: MitigationJob, classifier: Classifier, input_path: PathLike,
             output_path: PathLike, trace_path: Optional[PathLike] = None,
             summary_path: Optional[PathLike] = None) -> RunSummary:
    """Mitigate one image file and write every artifact."""
    image = load_image(input_path)
    logger.info(f"Mitigating {input_path} ({image.width}x{image.height}x{image.channels})")
    result = job.run(image, classifier)
    save_image(result.final_image, output_path)
    if trace_path is not None:
        write_trace_csv(result, trace_path, detail=job.trace_detail)
    summary = job.summarize(result, input_path, output_path)
    if summary_path is not None:
        write_summary(summary, summary_path)
    return summary


def kernel_sweep(image: ImageBuffer, kernel_specs: Sequence[str], job: MitigationJob,
                 classifier: Classifier, reference: Optional[ImageBuffer] = None) -> List[SweepRow]:
    """Run the same job once per kernel and report the outcomes side by side."""
    rows = []
    for spec in kernel_specs:
        kernel = parse_kernel_spec(spec)
        variant = replace(job, kernel=kernel, kernel_spec=spec)
        result = variant.run(image, classifier)
        final = result.final_prediction
        rows.append(SweepRow(
            kernel=spec,
            steps_run=result.steps_run,
            stop_reason=result.stop_reason.value,
            label=final.label,
            confidence=final.confidence,
            linf_to_reference=linf_distance(result.final_image, reference) if reference is not None else None,
            mae_to_reference=mean_abs_distance(result.final_image, reference) if reference is not None else None,
        ))
        logger.info(f"Kernel {spec}: {result.steps_run} steps, label {final.label}")
    return rows
