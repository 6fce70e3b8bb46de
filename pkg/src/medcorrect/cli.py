"""Command-line entry points.

Exit codes: 0 success, 1 usage or configuration problem, 2 data
validation problem, 3 failure rate above the configured ceiling.
"""

import json
import logging
import os
import sys
from collections import Counter
from typing import Optional

import click

from .config import (load_config, make_gateway, save_resolved,
                     strategy_from_config)
from .corpus import SPLITS, error_subset, load_dataset
from .errors import (ConfigError, FailureCeilingExceeded, ParseError,
                     RequestError, TransportError, ValidationError)
from .evaluation import (evaluate_predictions, format_report,
                         load_external_scores, report_to_json, save_report)
from .pipelines import (ExamplePool, load_predictions, run_dataset, save_run)
from .prompts import ReasonBank
from .sensitivity import (mcq_position_experiment, position_analysis,
                          position_analysis_to_json, role_sweep,
                          save_position_csv)
from .spans import (GoldOracleSpanPredictor, OfflineSpanPredictor,
                    RemoteSpanPredictor, export_squad_dataset)

logger = logging.getLogger(__name__)


@click.group()
@click.option("-v", "--verbose", count=True,
              help="Repeat for more logging (info, then debug).")
def cli(verbose: int) -> None:
    """Clinical-note error correction pipeline."""
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbose, logging.DEBUG)
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s")


def _load_split(tree: dict, split: str):
    if split not in SPLITS:
        raise ConfigError(f"unknown split {split!r}")
    path = tree["data"][split]
    if not path:
        raise ConfigError(f"config gives no path for the {split} split")
    return load_dataset(path, split)


def _make_predictor(tree: dict, kind: str, dataset):
    if kind == "none":
        return None
    if kind == "gold_oracle":
        return GoldOracleSpanPredictor(dataset)
    if kind == "offline":
        path = tree["predictor"]["offline_path"]
        if not path:
            raise ConfigError(
                "predictor.offline_path is required for the offline predictor")
        return OfflineSpanPredictor(path)
    if kind == "remote":
        endpoint = tree["predictor"]["endpoint"]
        if not endpoint:
            raise ConfigError(
                "predictor.endpoint is required for the remote predictor")
        return RemoteSpanPredictor(endpoint,
                                   timeout=float(tree["predictor"]["timeout"]))
    raise ConfigError(f"unknown predictor kind {kind!r}")


def _build_run_inputs(tree: dict):
    split = tree["run"]["split"]
    dataset = _load_split(tree, split)
    strategy_cfg = strategy_from_config(tree)
    gateway = make_gateway(tree)
    predictor = _make_predictor(tree, strategy_cfg.predictor, dataset)
    pool = None
    bank = None
    spec = strategy_cfg.prompt_spec
    if spec.shots > 0:
        pool_sets = [_load_split(tree, "train")]
        if tree["run"]["icl_include_valid"]:
            pool_sets.append(_load_split(tree, "valid"))
        pool = ExamplePool(pool_sets)
        if spec.cot_style != "none":
            bank_path = tree["reason_bank"]["path"]
            if not bank_path:
                raise ConfigError(
                    "reason_bank.path is required for chain-of-thought runs")
            bank = ReasonBank.load(bank_path)
    return dataset, strategy_cfg, gateway, predictor, pool, bank


@cli.command()
@click.argument("path", type=click.Path())
@click.option("--split", default="train", show_default=True,
              help="Which split the file belongs to.")
def ingest(path: str, split: str) -> None:
    """Validate a dataset file and print per-source counts."""
    dataset = load_dataset(path, split)
    by_source = Counter(record.note.source for record in dataset)
    labelled = dataset.has_labels()
    for source in sorted(by_source):
        records = [r for r in dataset if r.note.source == source]
        if labelled:
            n_error = sum(r.gold.error_flag for r in records)
            click.echo(f"{source}: {len(records)} notes "
                       f"({n_error} error, {len(records) - n_error} no-error)")
        else:
            click.echo(f"{source}: {len(records)} notes (labels absent)")
    click.echo(f"total: {len(dataset)} notes")


_CONFIG_OPTIONS = [
    click.option("--config", "config_path", type=click.Path(), default=None,
                 help="YAML config file."),
    click.option("--set", "overrides", multiple=True, metavar="KEY.PATH=VALUE",
                 help="Override one config value; repeatable."),
]


def _with_config_options(fn):
    for option in reversed(_CONFIG_OPTIONS):
        fn = option(fn)
    return fn


@cli.command("reason-bank")
@_with_config_options
def reason_bank(config_path: Optional[str], overrides) -> None:
    """Generate demonstration rationales for the training split."""
    from .pipelines import build_icl_bank

    tree = load_config(config_path, overrides)
    style = tree["reason_bank"]["style"]
    path = tree["reason_bank"]["path"]
    if not path:
        raise ConfigError("reason_bank.path is required")
    dataset = _load_split(tree, "train")
    gateway = make_gateway(tree)
    bank, failures = build_icl_bank(dataset, style, gateway, path)
    click.echo(f"bank: {len(bank)} entries at {path}")
    if failures:
        click.echo(f"failed: {len(failures)} records")
        for row in failures[:10]:
            click.echo(f"  {row['note_id']}: {row['error']}")


@cli.command()
@_with_config_options
def predict(config_path: Optional[str], overrides) -> None:
    """Run the configured strategy over a split and save predictions."""
    tree = load_config(config_path, overrides)
    dataset, strategy_cfg, gateway, predictor, pool, bank = \
        _build_run_inputs(tree)
    run = run_dataset(dataset, strategy_cfg, gateway, predictor=predictor,
                      pool=pool, bank=bank)
    out_dir = tree["run"]["output_dir"]
    save_run(out_dir, run)
    save_resolved(tree, os.path.join(out_dir, "config.yaml"))
    click.echo(f"predictions: {len(run.results)} results, "
               f"{len(run.failures)} failures -> {out_dir}")
    ceiling = tree["run"]["failure_ceiling"]
    if ceiling is not None and run.failure_rate > float(ceiling):
        raise FailureCeilingExceeded(
            f"failure rate {run.failure_rate:.2%} is above the "
            f"{float(ceiling):.2%} ceiling")


@cli.command()
@click.option("--data", "data_path", type=click.Path(), required=True)
@click.option("--split", default="valid", show_default=True)
@click.option("--predictions", "predictions_path", type=click.Path(),
              required=True)
@click.option("--sidecar", "sidecar_path", type=click.Path(), default=None,
              help="Model-based metric scores (TSV).")
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Where to write the JSON report.")
def evaluate(data_path: str, split: str, predictions_path: str,
             sidecar_path: Optional[str], out_path: Optional[str]) -> None:
    """Score a predictions file against gold labels."""
    dataset = load_dataset(data_path, split)
    preds = load_predictions(predictions_path)
    external = load_external_scores(sidecar_path) if sidecar_path else None
    report = evaluate_predictions(dataset, preds, external)
    click.echo(format_report(report))
    if out_path:
        save_report(report, out_path)


@cli.command()
@click.argument("analysis",
                type=click.Choice(["position", "roles", "mcq-position"]))
@_with_config_options
@click.option("--data", "data_path", type=click.Path(), default=None)
@click.option("--split", default="valid", show_default=True)
@click.option("--predictions", "predictions_path", type=click.Path(),
              default=None)
@click.option("--metric", default="rouge1", show_default=True)
@click.option("--sidecar", "sidecar_path", type=click.Path(), default=None)
@click.option("--adjustment", type=click.Choice(["none", "bonferroni"]),
              default="none", show_default=True)
@click.option("--out-dir", "out_dir", type=click.Path(), default=None)
def sensitivity(analysis: str, config_path: Optional[str], overrides,
                data_path: Optional[str], split: str,
                predictions_path: Optional[str], metric: str,
                sidecar_path: Optional[str], adjustment: str,
                out_dir: Optional[str]) -> None:
    """Run one robustness analysis."""
    if analysis == "position":
        if not data_path or not predictions_path:
            raise click.UsageError(
                "position analysis needs --data and --predictions")
        dataset = load_dataset(data_path, split)
        preds = load_predictions(predictions_path)
        external = load_external_scores(sidecar_path) if sidecar_path else None
        result = position_analysis(dataset, preds, metric=metric,
                                   external=external, adjustment=adjustment)
        for name in result.bin_order:
            summary = result.bins[name]
            click.echo(f"{name}: n={summary.n} mean={summary.mean:.4f} "
                       f"median={summary.median:.4f}")
        if result.h_test is None:
            click.echo("rank tests skipped (too few populated bins or items)")
        else:
            click.echo(f"H={result.h_test.h:.4f} df={result.h_test.df} "
                       f"p={result.h_test.p:.4f}")
            for (a, b), p in sorted(result.dunn.items()):
                click.echo(f"dunn {a} vs {b}: p={p:.4f}")
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            with open(os.path.join(out_dir, "position.json"), "w",
                      encoding="utf-8") as handle:
                json.dump(position_analysis_to_json(result), handle, indent=2,
                          sort_keys=True)
                handle.write("\n")
            save_position_csv(result,
                              os.path.join(out_dir, "position_bins.csv"))
        return

    tree = load_config(config_path, overrides)
    dataset, strategy_cfg, gateway, predictor, pool, bank = \
        _build_run_inputs(tree)
    external = load_external_scores(sidecar_path) if sidecar_path else None
    if analysis == "roles":
        sweep = role_sweep(dataset, strategy_cfg, gateway,
                           predictor=predictor, pool=pool, bank=bank,
                           external=external)
        payload = {"masked_config_hash": sweep.masked_config_hash, "roles": {}}
        for role, report in sweep.reports.items():
            click.echo(f"{role}: acc_flag={report.acc_flag:.4f} "
                       f"acc_sent_id={report.acc_sent_id:.4f} "
                       f"rouge1={report.rouge1:.4f}")
            payload["roles"][role] = report_to_json(report)
        out_name = "roles.json"
    else:
        sweep = mcq_position_experiment(dataset, strategy_cfg, gateway,
                                        predictor, external=external)
        payload = {"positions": {}}
        for label, report in sweep.reports.items():
            click.echo(f"span at {label}: acc_flag={report.acc_flag:.4f} "
                       f"acc_sent_id={report.acc_sent_id:.4f} "
                       f"rouge1={report.rouge1:.4f}")
            payload["positions"][label] = report_to_json(report)
        out_name = "mcq_position.json"
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, out_name), "w",
                  encoding="utf-8") as handle:
            json.dump(payload, handle, indent=2, sort_keys=True)
            handle.write("\n")


@cli.command("span-export")
@click.option("--data", "data_path", type=click.Path(), required=True)
@click.option("--split", default="train", show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Write error-note QA records here.")
@click.option("--check-predictions", "check_path", type=click.Path(),
              default=None,
              help="Verify an offline span predictions file covers the split.")
def span_export(data_path: str, split: str, out_path: Optional[str],
                check_path: Optional[str]) -> None:
    """Exchange span data with the span service."""
    if not out_path and not check_path:
        raise click.UsageError("need --out or --check-predictions")
    dataset = load_dataset(data_path, split)
    if out_path:
        n = export_squad_dataset(dataset, out_path)
        click.echo(f"exported {n} error-note records -> {out_path}")
    if check_path:
        predictor = OfflineSpanPredictor(check_path)
        wanted = error_subset(dataset)
        covered = sum(
            1 for record in wanted
            if predictor.predict(record.note) is not None)
        click.echo(f"predictions cover {covered} of {len(wanted)} error notes")
        if covered < len(wanted):
            raise ValidationError(
                f"offline predictions missing {len(wanted) - covered} "
                "error notes")


def main(argv=None) -> int:
    """Programmatic entry point mapping failures to exit codes."""
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return 1
    except (ParseError, ValidationError) as exc:
        click.echo(f"data error: {exc}", err=True)
        return 2
    except FailureCeilingExceeded as exc:
        click.echo(f"run failed: {exc}", err=True)
        return 3
    except (TransportError, RequestError) as exc:
        click.echo(f"backend error: {exc}", err=True)
        return 1
    except OSError as exc:
        click.echo(f"file error: {exc}", err=True)
        return 1
    return 0


def entry() -> None:
    sys.exit(main())
