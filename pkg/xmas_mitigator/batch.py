"""
Parallel mitigation of every image in a directory.

Each image runs in a worker thread with its own state and its own classifier
instance; results are reported in input order.
"""
import asyncio
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

from .classifier import GALLERY_SUFFIXES
from .models import RunSummary
from .pipeline import ClassifierFactory, MitigationJob, run_file

logger = logging.getLogger('Batch')


@dataclass
class BatchItem:
    input_path: Path
    summary: Optional[RunSummary] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


def list_inputs(input_dir: Path) -> List[Path]:
    return sorted(p for p in Path(input_dir).iterdir()
                  if p.is_file() and p.suffix.lower() in GALLERY_SUFFIXES)


def _run_one(job: MitigationJob, factory: ClassifierFactory, src: Path, out_dir: Path) -> RunSummary:
    classifier = factory()
    try:
        return run_file(
            job, classifier, src,
            output_path=out_dir / f"{src.stem}.png",
            trace_path=out_dir / f"{src.stem}.trace.csv",
            summary_path=out_dir / f"{src.stem}.json",
        )
    finally:
        classifier.close()


async def mitigate_batch(job: MitigationJob, factory: ClassifierFactory,
                         input_dir: Path, output_dir: Path, workers: int = 4) -> List[BatchItem]:
    """Mitigate all PNG/PPM/PGM files of ``input_dir`` into ``output_dir``."""
    inputs = list_inputs(input_dir)
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    logger.info(f"Batch of {len(inputs)} images with {workers} workers")

    loop = asyncio.get_running_loop()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        tasks = [loop.run_in_executor(pool, _run_one, job, factory, src, output_dir) for src in inputs]
        results = await asyncio.gather(*tasks, return_exceptions=True)

    items = []
    for src, outcome in zip(inputs, results):
        if isinstance(outcome, Exception):
            logger.error(f"❌ {src.name}: {outcome}")
            items.append(BatchItem(src, error=str(outcome)))
        else:
            items.append(BatchItem(src, summary=outcome))
    return items
