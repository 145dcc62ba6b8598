"""
Command Line Interface for xmas-mitigator
"""
import asyncio
import csv
import functools
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import click
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from . import __version__
from .attack_synth import PRNG_ALGORITHM, AttackMode, AttackSpec, saturation_stats, synth_perturb
from .batch import mitigate_batch
from .classifier import parse_classifier
from .config import get_settings
from .estimator import estimate
from .exceptions import KernelFormatError, XmasError
from .image_core import linf_distance, load_image, parse_kernel_spec, save_image
from .models import AttackSidecar
from .moving_average import BorderMode
from .pipeline import MitigationJob, kernel_sweep, run_file
from .probability_oracle import monte_carlo_reduction_prob, probability_table
from .soothing import JpegSoother, jpeg_bytes, parse_soother

logger = logging.getLogger('XmasCLI')

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def setup_logging(level: str, log_file: Optional[str]) -> None:
    handlers = [RichHandler(console=Console(stderr=True), show_path=False)]
    if log_file:
        file_handler = logging.FileHandler(log_file)
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handlers.append(file_handler)
    logging.basicConfig(level=level.upper(), format='%(message)s', handlers=handlers, force=True)


def handle_errors(func):
    """Log library and I/O errors and exit with status 1."""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (XmasError, OSError) as e:
            logger.error(f"❌ {e}")
            sys.exit(1)
    return wrapper


def _kernel_option(ctx, param, value):
    try:
        return value, parse_kernel_spec(value)
    except KernelFormatError as e:
        raise click.BadParameter(str(e), ctx=ctx, param=param)


def _soother_option(ctx, param, value):
    if value is None:
        value = f"jpeg:{get_settings().jpeg_quality}"
    try:
        return parse_soother(value, get_settings().border_mode)
    except (ValueError, KernelFormatError) as e:
        raise click.BadParameter(str(e), ctx=ctx, param=param)


def _write_json(text: str, path: Optional[str]) -> None:
    if path:
        Path(path).write_text(text + '\n', encoding='utf-8')
    else:
        click.echo(text)


border_option = click.option(
    '--border', type=click.Choice([m.value for m in BorderMode]), default=None,
    help='Border policy of the moving average (default from settings: replicate)')


@click.group()
@click.option('--log-level',
              type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'], case_sensitive=False),
              default=None,
              help='Set the logging level')
@click.option('--log-file', type=click.Path(dir_okay=False), default=None,
              help='Also write logs to this file')
def cli(log_level: Optional[str], log_file: Optional[str]):
    """xmas-mitigator - moving-average mitigation of adversarial perturbations"""
    settings = get_settings()
    setup_logging(log_level or settings.log_level, log_file or settings.log_file)


@cli.command()
@click.option('--in', 'input_path', required=True, type=click.Path(dir_okay=False), help='Clean input image')
@click.option('--out', 'output_path', required=True, type=click.Path(dir_okay=False), help='Perturbed output image')
@click.option('--epsilon', required=True, type=click.FloatRange(0, 255), help='L∞ budget in sample units')
@click.option('--mode', type=click.Choice([m.value for m in AttackMode]), default='fast', show_default=True)
@click.option('--seed', type=int, default=0, show_default=True)
@click.option('--iterations', type=click.IntRange(min=1), default=None,
              help='Iterations of the clipped attack (default from settings: 10)')
@click.option('--sidecar', type=click.Path(dir_okay=False), default=None,
              help='Sidecar JSON path (default: <out>.json)')
@handle_errors
def perturb(input_path, output_path, epsilon, mode, seed, iterations, sidecar):
    """Apply a synthetic FGSM-style sign perturbation"""
    clean = load_image(input_path)
    spec = AttackSpec(
        epsilon=epsilon,
        mode=AttackMode(mode),
        iterations=iterations or get_settings().attack_iterations,
        seed=seed,
    )
    result = synth_perturb(clean, spec)
    save_image(result.image, output_path)
    report = AttackSidecar(
        source=str(input_path),
        epsilon=spec.epsilon,
        mode=spec.mode.value,
        iterations=spec.iterations,
        seed=spec.seed,
        prng=PRNG_ALGORITHM,
        linf=linf_distance(result.image, clean),
        saturation=saturation_stats(result.image).to_report(),
    )
    sidecar = sidecar or str(Path(output_path).with_suffix('.json'))
    _write_json(report.model_dump_json(indent=2), sidecar)
    logger.info(f"Wrote {output_path} (ε={epsilon:g}, {mode}, seed {seed})")


@cli.command()
@click.option('--in', 'input_path', type=click.Path(dir_okay=False), default=None, help='Input image')
@click.option('--out', 'output_path', type=click.Path(), default=None,
              help='Mitigated image (output directory with --batch)')
@click.option('--kernel', 'kernel', default='ones:3', show_default=True, callback=_kernel_option,
              help='ones:N, center:N:M, weighted:N:W or a kernel file')
@click.option('--k', 'k', type=click.IntRange(min=2), default=None, help='Prediction ring size (default 5)')
@click.option('--max-steps', type=click.IntRange(min=1), default=None, help='Step cap (default 100)')
@click.option('--soother', default=None, callback=_soother_option,
              help='jpeg:Q, mean:N or none (default jpeg:20)')
@click.option('--classifier', 'classifier_spec', required=True, help='toy:<gallery-dir> or cmd:<command>')
@click.option('--trace', 'trace_path', type=click.Path(dir_okay=False), default=None, help='Trace CSV path')
@click.option('--trace-detail', is_flag=True, help='Add applied_sub, applied_add and updated columns')
@click.option('--summary', 'summary_path', type=click.Path(dir_okay=False), default=None,
              help='Run summary JSON path (default: <out>.json)')
@border_option
@click.option('--refresh-boundary', is_flag=True, help='Recompute the boundary every step (experiment)')
@click.option('--round-between-steps', is_flag=True, help='Round the boundary and each step to integers')
@click.option('--no-stall-stop', is_flag=True, help='Do not stop when the image stops changing')
@click.option('--emit-jpeg', type=click.Path(dir_okay=False), default=None,
              help='Also write the JPEG bytes of the soothed final image')
@click.option('--batch', 'batch_dir', type=click.Path(file_okay=False, exists=True), default=None,
              help='Mitigate every image of this directory')
@click.option('--workers', type=click.IntRange(min=1), default=None, help='Parallel images with --batch')
@handle_errors
def mitigate(input_path, output_path, kernel, k, max_steps, soother, classifier_spec, trace_path,
             trace_detail, summary_path, border, refresh_boundary, round_between_steps, no_stall_stop,
             emit_jpeg, batch_dir, workers):
    """Run the multi-level mitigation on an image"""
    settings = get_settings()
    kernel_spec, kernel_obj = kernel
    if output_path is None:
        raise click.UsageError("--out is required")
    if batch_dir is None and input_path is None:
        raise click.UsageError("either --in or --batch is required")
    job = MitigationJob(
        kernel=kernel_obj,
        kernel_spec=kernel_spec,
        soother=soother,
        classifier_spec=classifier_spec,
        k=k or settings.k,
        max_steps=max_steps or settings.max_steps,
        border=BorderMode.parse(border or settings.border_mode),
        stop_on_stall=settings.stop_on_stall and not no_stall_stop,
        refresh_boundary=refresh_boundary,
        round_between_steps=round_between_steps,
        trace_detail=trace_detail,
    )

    def factory():
        try:
            return parse_classifier(classifier_spec, settings.classifier_timeout, settings.toy_temperature)
        except ValueError as e:
            raise click.BadParameter(str(e), param_hint='--classifier')

    if batch_dir is not None:
        # reject a bad --classifier as a usage error before any worker starts
        factory().close()
        items = asyncio.run(mitigate_batch(job, factory, Path(batch_dir), Path(output_path),
                                           workers or settings.batch_workers))
        failed = [item for item in items if not item.ok]
        logger.info(f"Batch finished: {len(items) - len(failed)} ok, {len(failed)} failed")
        if failed:
            sys.exit(1)
        return

    logger.info(f"🚀 Mitigating {input_path} with kernel {kernel_spec}, soother {soother.name}")
    clf = factory()
    try:
        summary = run_file(
            job, clf, input_path, output_path,
            trace_path=trace_path,
            summary_path=summary_path or str(Path(output_path).with_suffix('.json')),
        )
    finally:
        clf.close()
    if emit_jpeg:
        quality = soother.quality if isinstance(soother, JpegSoother) else settings.jpeg_quality
        Path(emit_jpeg).write_bytes(jpeg_bytes(load_image(output_path), quality))
    logger.info(f"✅ {summary.stop_reason} after {summary.steps_run} steps, label {summary.final_label}")


@cli.command(name='estimate')
@click.option('--in', 'input_path', required=True, type=click.Path(dir_okay=False))
@click.option('--kernel', 'kernel', default='ones:3', show_default=True, callback=_kernel_option)
@click.option('--heat', type=click.Path(dir_okay=False), default=None, help='Write the raw difference as a PGM')
@click.option('--json', 'json_path', type=click.Path(dir_okay=False), default=None,
              help='Write the magnitudes here instead of stdout')
@border_option
@handle_errors
def estimate_cmd(input_path, kernel, heat, json_path, border):
    """Estimate the perturbation of an image"""
    _, kernel_obj = kernel
    est = estimate(load_image(input_path), kernel_obj, border or get_settings().border_mode)
    if heat:
        save_image(est.heat_image(), heat)
    _write_json(est.to_report().model_dump_json(indent=2), json_path)


@cli.command()
@click.option('--in', 'input_path', required=True, type=click.Path(dir_okay=False))
@click.option('--out', 'output_path', required=True, type=click.Path(dir_okay=False))
@click.option('--soother', default=None, callback=_soother_option, help='jpeg:Q, mean:N or none')
@click.option('--emit-jpeg', type=click.Path(dir_okay=False), default=None,
              help='Also write the intermediate JPEG bytes (jpeg soother only)')
@handle_errors
def soothe(input_path, output_path, soother, emit_jpeg):
    """Apply one soothing function"""
    img = load_image(input_path)
    save_image(soother(img), output_path)
    if emit_jpeg and isinstance(soother, JpegSoother):
        Path(emit_jpeg).write_bytes(jpeg_bytes(img, soother.quality))
    logger.info(f"Soothed {input_path} with {soother.name}")


@cli.command()
@click.option('--in', 'input_path', required=True, type=click.Path(dir_okay=False))
@click.option('--table', is_flag=True, help='Print a summary table instead of JSON')
@handle_errors
def stats(input_path, table):
    """Print out-of-bound sample statistics"""
    result = saturation_stats(load_image(input_path))
    if not table:
        click.echo(result.to_report().model_dump_json(indent=2))
        return
    t = Table(title=str(input_path))
    t.add_column('metric')
    t.add_column('value', justify='right')
    t.add_row('pixels', str(result.width * result.height))
    t.add_row('black tuples', str(result.black_tuples))
    t.add_row('white tuples', str(result.white_tuples))
    t.add_row('distinct values', str(len(result.histogram)))
    Console().print(t)


@cli.command(name='verify-probability')
@click.option('--n', 'sides', type=click.IntRange(min=1), multiple=True, default=(3,), show_default=True,
              help='Kernel side (repeatable)')
@click.option('--values', 'values_per_sample', type=click.IntRange(min=2), default=3, show_default=True)
@click.option('--monte-carlo', 'trials', type=click.IntRange(min=1), default=None,
              help='Also estimate the reduction probability with this many trials')
@click.option('--seed', type=int, default=0, show_default=True)
@click.option('--json', 'as_json', is_flag=True, help='Emit JSON rows')
@handle_errors
def verify_probability(sides, values_per_sample, trials, seed, as_json):
    """Verify the window probabilities of moving-averaged sign fields"""
    rows = probability_table(list(sides), values_per_sample, get_settings().max_enumeration)
    if as_json:
        click.echo(json.dumps([row.model_dump() for row in rows], indent=2))
    else:
        for row in rows:
            click.echo(f"n={row.n} values={row.values_per_sample}")
            click.echo(f"  P[mean == +eps]  = {row.equal_prob}  ({row.equal_decimal:.6e})")
            click.echo(f"  P[|mean| < eps]  = {row.strict_reduction_prob}  ({row.strict_reduction_decimal:.6f})")
            if row.quoted:
                click.echo(f"  quoted: {row.quoted}")
    if trials:
        for n in sides:
            mc = monte_carlo_reduction_prob(n, trials, seed)
            click.echo(f"n={n} monte-carlo: {mc.frequency:.6f} "
                       f"95% interval [{mc.lower:.6f}, {mc.upper:.6f}] ({trials} trials, seed {seed})")


@cli.command()
@click.option('--in', 'input_path', required=True, type=click.Path(dir_okay=False))
@click.option('--kernels', 'kernel_specs', multiple=True, default=('ones:3', 'ones:5', 'ones:7'),
              show_default=True, help='Kernel specs to compare (repeatable)')
@click.option('--reference', type=click.Path(dir_okay=False), default=None,
              help='Clean image to measure the final distance against')
@click.option('--classifier', 'classifier_spec', required=True)
@click.option('--soother', default=None, callback=_soother_option)
@click.option('--k', 'k', type=click.IntRange(min=2), default=None)
@click.option('--max-steps', type=click.IntRange(min=1), default=None)
@click.option('--csv', 'csv_path', type=click.Path(dir_okay=False), default=None, help='Write rows as CSV')
@border_option
@handle_errors
def sweep(input_path, kernel_specs, reference, classifier_spec, soother, k, max_steps, csv_path, border):
    """Compare mitigation outcomes across kernels"""
    settings = get_settings()
    image = load_image(input_path)
    ref = load_image(reference) if reference else None
    job = MitigationJob(
        kernel=parse_kernel_spec(kernel_specs[0]),
        kernel_spec=kernel_specs[0],
        soother=soother,
        classifier_spec=classifier_spec,
        k=k or settings.k,
        max_steps=max_steps or settings.max_steps,
        border=BorderMode.parse(border or settings.border_mode),
        stop_on_stall=settings.stop_on_stall,
    )
    try:
        clf = parse_classifier(classifier_spec, settings.classifier_timeout, settings.toy_temperature)
    except ValueError as e:
        raise click.BadParameter(str(e), param_hint='--classifier')
    try:
        rows = kernel_sweep(image, kernel_specs, job, clf, ref)
    finally:
        clf.close()

    fields = list(rows[0].model_dump().keys())
    if csv_path:
        with open(csv_path, 'w', encoding='utf-8', newline='') as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            writer.writerows(row.model_dump() for row in rows)
    t = Table(title=f"kernel sweep: {input_path}")
    for name in fields:
        t.add_column(name)
    for row in rows:
        t.add_row(*('' if v is None else str(v) for v in row.model_dump().values()))
    Console().print(t)


@cli.command()
def version():
    """Show version information"""
    click.echo(f"xmas-mitigator v{__version__}")
    click.echo("Moving-average mitigation of adversarial perturbations")


def main():
    cli()


if __name__ == '__main__':
    main()
