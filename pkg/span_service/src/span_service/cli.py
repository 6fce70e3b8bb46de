"""Command line entry points: train, serve, export."""

import logging
import sys
from typing import Optional

import click

from .data import load_qa_jsonl, take_fraction
from .errors import SpanServiceError
from .export import export_predictions
from .model import EncoderSettings
from .serve import SpanModel, create_app
from .train import TrainJob, train

logger = logging.getLogger(__name__)


@click.group()
@click.option("-v", "--verbose", count=True,
              help="Repeat for more logging (info, then debug).")
def cli(verbose: int) -> None:
    """Span prediction service for the correction pipeline."""
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbose, logging.DEBUG)
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s")


@cli.command("train")
@click.option("--train", "train_path", type=click.Path(), required=True,
              help="QA-format JSONL with answers.")
@click.option("--eval", "eval_path", type=click.Path(), default=None,
              help="Validation QA JSONL; defaults to the training file.")
@click.option("--mix-valid", "mix_path", type=click.Path(), default=None,
              help="Second source's validation QA file to fold in partially.")
@click.option("--mix-fraction", default=0.25, show_default=True,
              help="Share of --mix-valid folded into training "
                   "(sorted ids, first floor(n * fraction)).")
@click.option("--checkpoint-dir", type=click.Path(), required=True)
@click.option("--epochs", default=40, show_default=True)
@click.option("--learning-rate", default=1e-3, show_default=True)
@click.option("--batch-size", default=8, show_default=True)
@click.option("--seed", default=13, show_default=True)
@click.option("--max-length", default=160, show_default=True)
@click.option("--stride", default=48, show_default=True)
@click.option("--stop-em", type=float, default=None,
              help="Stop early once validation exact match reaches this.")
def train_command(train_path: str, eval_path: Optional[str],
                  mix_path: Optional[str], mix_fraction: float,
                  checkpoint_dir: str, epochs: int, learning_rate: float,
                  batch_size: int, seed: int, max_length: int, stride: int,
                  stop_em: Optional[float]) -> None:
    """Fine-tune the span model on exported QA records."""
    train_records = load_qa_jsonl(train_path, require_answers=True)
    if mix_path:
        mixed = load_qa_jsonl(mix_path, require_answers=True)
        held_in = take_fraction(mixed, mix_fraction)
        train_records = train_records + held_in
        click.echo(f"mixed in {len(held_in)} of {len(mixed)} records "
                   f"from {mix_path}")
    eval_records = (load_qa_jsonl(eval_path, require_answers=True)
                    if eval_path else train_records)
    job = TrainJob(train_records=train_records, eval_records=eval_records,
                   checkpoint_dir=checkpoint_dir, epochs=epochs,
                   learning_rate=learning_rate, batch_size=batch_size,
                   seed=seed,
                   settings=EncoderSettings(max_length=max_length,
                                            stride=stride),
                   stop_em=stop_em)
    result = train(job)
    click.echo(f"best epoch {result.best_epoch}: "
               f"em {result.best_em:.3f} f1 {result.best_f1:.3f}")
    click.echo(f"best checkpoint: {result.best_path}")


@cli.command("serve")
@click.option("--checkpoint", type=click.Path(), required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8750, show_default=True)
def serve_command(checkpoint: str, host: str, port: int) -> None:
    """Serve POST /predict over a loaded checkpoint."""
    import uvicorn

    model = SpanModel.load(checkpoint)
    uvicorn.run(create_app(model), host=host, port=port)


@cli.command("export")
@click.option("--checkpoint", type=click.Path(), required=True)
@click.option("--qa", "qa_path", type=click.Path(), required=True,
              help="QA-format JSONL to predict over (answers not needed).")
@click.option("--out", "out_path", type=click.Path(), required=True)
def export_command(checkpoint: str, qa_path: str, out_path: str) -> None:
    """Write offline span predictions for the correction pipeline."""
    model = SpanModel.load(checkpoint)
    records = load_qa_jsonl(qa_path)
    written, failed = export_predictions(model, records, out_path)
    click.echo(f"exported {written} predictions -> {out_path}")
    if failed:
        click.echo(f"failed: {failed} records")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.UsageError as exc:
        click.echo(f"usage error: {exc}", err=True)
        return 1
    except SpanServiceError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except click.exceptions.Exit as exc:
        return exc.exit_code
    return 0


def entry() -> None:
    sys.exit(main())
