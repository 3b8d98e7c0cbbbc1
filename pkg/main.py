#!/usr/bin/env python3
"""
Command-line entry point for the multi-domain restoration framework.

Commands:
    synth           build a synthetic paired multi-domain dataset
    train           train G, F, D_X and D_Z in one of the ablation modes
    estimate-label  estimate the mapping label of an unseen domain
    evaluate        correct a dataset split and score it
    report          agreement plots and the ablation summary table

Exit codes: 0 success, 1 validation/configuration error, 2 runtime or
numerical failure. Errors are printed to stderr as JSON.
"""
import functools
import json
import shutil
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional

import click

from config import settings
from lib.data.dataset import PairedDataset, build_dataset, load_dataset, save_dataset
from lib.data.preprocessing import content_slices
from lib.data.synthesis import DomainSpec, default_domains, domains_from_config, mixture_domain
from lib.data.validators import DatasetValidator
from lib.estimation.label_search import estimate_label, objective_for_checkpoint, refine_label_gradient
from lib.metrics.report import (
    ablation_table,
    load_metric_frame,
    write_ablation_table,
    write_agreement,
    write_metric_report,
)
from lib.training.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from lib.training.evaluation import evaluate_dataset
from lib.training.losses import domain_weights
from lib.training.trainer import Trainer, set_seed, training_slice_counts
from lib.utils.config import ExperimentConfig, TrainingMode, apply_overrides, load_experiment_config
from lib.utils.errors import RestorationError, ValidationError
from lib.utils.logging_config import get_logger, setup_logging

logger = get_logger(__name__)

MODES = [m.value for m in TrainingMode]


def handle_errors(func):
    """Turn errors into stderr JSON and the matching exit code"""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except RestorationError as e:
            logger.error("command_failed", command=func.__name__, error=e.kind, message=e.message)
            click.echo(json.dumps(e.to_dict()), err=True)
            sys.exit(e.exit_code)
        except click.ClickException:
            raise
        except Exception as e:
            logger.exception("command_crashed", command=func.__name__, error=type(e).__name__)
            click.echo(json.dumps({"error": "runtime_error", "type": type(e).__name__, "message": str(e)}), err=True)
            sys.exit(2)
    return wrapper


def _config(path: Optional[str], overrides: Dict[str, Any]) -> ExperimentConfig:
    if path is None and settings.experiment_file.exists():
        path = str(settings.experiment_file)
    return load_experiment_config(path, overrides)


def _run_config(checkpoint: Checkpoint, config_path: Optional[str], seed: Optional[int],
                overrides: Dict[str, Any]) -> ExperimentConfig:
    """Checkpoint config with the search and metric sections optionally read from another YAML"""
    config = checkpoint.config
    if config_path is not None:
        loaded = load_experiment_config(config_path, {})
        config = config.model_copy(update={"grid_search": loaded.grid_search, "metrics": loaded.metrics})
    config = apply_overrides(config, {"seed": seed, **overrides})
    set_seed(config.seed, config.train.deterministic)
    return config


def _prepare_out(path: Path, force: bool) -> Path:
    if path.exists() and any(path.iterdir()):
        if not force:
            raise ValidationError(f"Output directory {path} is not empty; use --force to overwrite", path=str(path))
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, payload: Dict[str, Any]) -> Path:
    with open(path, 'w') as f:
        json.dump(payload, f, indent=2, default=str)
    return path


def _parse_label(text: Optional[str]) -> Optional[List[float]]:
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(',')]
    except ValueError:
        raise ValidationError(f"Label must be comma-separated numbers, got '{text}'", label=text)


def _domain_specs(config: ExperimentConfig, count: Optional[int]) -> List[DomainSpec]:
    configured = config.data.domains
    if count is None:
        count = len(configured) or len(config.data.subjects_per_domain)
    if configured:
        if count > len(configured):
            raise ValidationError(f"Config defines {len(configured)} domains, {count} requested", count=count)
        return domains_from_config(configured[:count], count)
    return default_domains(count)


def _subject_counts(config: ExperimentConfig, count: int) -> List[int]:
    counts = list(config.data.subjects_per_domain)
    return (counts + [counts[-1]] * count)[:count]


def _mixture(text: str, specs: List[DomainSpec]) -> DomainSpec:
    try:
        a, b, alpha = text.split(',')
        alpha = float(alpha)
    except ValueError:
        raise ValidationError(f"--mixture expects 'domain_a,domain_b,alpha', got '{text}'", mixture=text)
    by_name = {s.name: s for s in specs}
    for name in (a, b):
        if name not in by_name:
            raise ValidationError(f"Unknown domain '{name}' in --mixture", domain=name)
    return mixture_domain(by_name[a], by_name[b], alpha)


@click.group()
@click.option('--log-level', default=None, help='Override RESTORE_LOG_LEVEL')
@click.option('--json-logs/--console-logs', default=None, help='Render logs as JSON')
def cli(log_level: Optional[str], json_logs: Optional[bool]):
    """Multi-domain conditional restoration of short-scan PET volumes."""
    setup_logging(
        level=log_level or ("DEBUG" if settings.debug else settings.log_level.value),
        enable_json=settings.enable_json_logs if json_logs is None else json_logs,
        sentry_config=settings.get_sentry_config(),
    )


@cli.command()
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None, help='Experiment YAML')
@click.option('--seed', type=int, default=None)
@click.option('--domains', type=int, default=None, help='Number of training domains')
@click.option('--subjects', type=int, default=None, help='Subjects per domain (overrides the config list)')
@click.option('--mixture', default=None, help="Held-out mixture domain 'domain_a,domain_b,alpha'")
@click.option('--mixture-subjects', type=int, default=2, show_default=True)
@click.option('--out', 'out_dir', type=click.Path(file_okay=False), required=True)
@click.option('--force', is_flag=True, help='Overwrite a non-empty output directory')
@handle_errors
def synth(config_path, seed, domains, subjects, mixture, mixture_subjects, out_dir, force):
    """Build a synthetic paired dataset."""
    config = _config(config_path, {"seed": seed})
    specs = _domain_specs(config, domains)
    counts = [subjects] * len(specs) if subjects else _subject_counts(config, len(specs))
    if mixture:
        specs = specs + [_mixture(mixture, specs)]
        counts = counts + [mixture_subjects]

    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise ValidationError(f"Output directory {out} is not empty; use --force to overwrite", path=str(out))

    dataset = build_dataset(
        specs, counts, config.data.dims, config.seed,
        phantom=config.data.phantom, amplitude=config.data.amplitude, spacing=config.data.spacing_mm,
        val_fraction=config.data.val_fraction, multiple=config.data.pad_multiple,
        num_workers=settings.num_workers,
    )
    DatasetValidator(config.data.pad_multiple).validate(dataset).raise_for_errors("dataset")
    kept = training_slice_counts(dataset, config.train.exclude_air_slices, config.train.air_threshold)
    weights = domain_weights(kept)
    save_dataset(dataset, out, force=force, extra={"config_hash": config.config_hash()})

    summary = {
        "path": str(out),
        "domains": [
            {
                "name": d.spec.name,
                "label": d.spec.one_hot_label.to_list() if d.spec.one_hot_label is not None else None,
                "held_out": d.spec.held_out,
                "train_pairs": d.size("train"),
                "val_pairs": d.size("val"),
                "train_pairs_kept": None if d.spec.held_out else kept[d.spec.index],
            }
            for d in dataset.domains
        ],
        "weights": weights.to_list(),
        "config_hash": config.config_hash(),
    }
    click.echo(json.dumps(summary, indent=2))


@cli.command()
@click.option('--dataset', 'dataset_dir', type=click.Path(exists=True, file_okay=False), required=True)
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None)
@click.option('--mode', type=click.Choice(MODES), default=None)
@click.option('--epochs', type=int, default=None)
@click.option('--seed', type=int, default=None)
@click.option('--batch-size', type=int, default=None)
@click.option('--domain', default=None, help='Train on this domain only (single-domain modes)')
@click.option('--out', 'out_dir', type=click.Path(file_okay=False), required=True)
@click.option('--force', is_flag=True)
@handle_errors
def train(dataset_dir, config_path, mode, epochs, seed, batch_size, domain, out_dir, force):
    """Train the restoration networks and write a checkpoint."""
    config = _config(config_path, {
        "train.mode": mode, "train.epochs": epochs, "train.seed": seed, "seed": seed,
        "train.batch_size": batch_size,
    })
    dataset: PairedDataset = load_dataset(dataset_dir)
    if domain is not None:
        dataset = dataset.single_domain(domain)
    DatasetValidator(config.generator.divisor).validate(dataset).raise_for_errors("dataset")

    out = _prepare_out(Path(out_dir), force)
    trainer = Trainer(config, domain_count=dataset.domain_count, device=settings.resolve_device())
    result = trainer.fit(dataset)

    save_checkpoint(result.checkpoint, out / "checkpoint")
    result.write_loss_csv(out / "losses.csv")
    result.batch_frame().to_csv(out / "batch_losses.csv", index=False)
    result.checkpoint.config.to_yaml(out / "config.yaml")
    _write_json(out / "run.json", {
        "mode": config.train.mode.value,
        "epochs": result.checkpoint.epoch,
        "dataset": str(dataset_dir),
        "domain": domain,
        "duration_seconds": round(result.duration, 3),
        "config_hash": result.checkpoint.config.config_hash(),
        "final_losses": result.history[-1].to_dict() if result.history else None,
    })
    click.echo(json.dumps({"checkpoint": str(out / "checkpoint"), "epochs": result.checkpoint.epoch}))


@cli.command('estimate-label')
@click.option('--checkpoint', 'checkpoint_dir', type=click.Path(exists=True, file_okay=False), required=True)
@click.option('--calibration', 'calibration_dir', type=click.Path(exists=True, file_okay=False), required=True,
              help='Dataset directory holding the unseen-domain pairs')
@click.option('--domain', default=None, help='Calibration domain (default: the first held-out domain)')
@click.option('--split', default='val', show_default=True)
@click.option('--max-slices', type=int, default=None, help='Use at most this many calibration slices')
@click.option('--epsilon', type=float, default=None)
@click.option('--coarse', type=float, default=None)
@click.option('--fine', type=float, default=None)
@click.option('--exhaustive', is_flag=True, help='Search the fine lattice over the whole box')
@click.option('--gradient', is_flag=True, help='Polish the grid optimum by gradient descent')
@click.option('--surface', is_flag=True, help='Also write the evaluated grid as CSV')
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False), default=None,
              help='YAML whose grid_search section replaces the checkpoint one')
@click.option('--seed', type=int, default=None)
@click.option('--out', 'out_dir', type=click.Path(file_okay=False), required=True)
@click.option('--force', is_flag=True)
@handle_errors
def estimate_label_cmd(checkpoint_dir, calibration_dir, domain, split, max_slices, epsilon, coarse, fine,
                       exhaustive, gradient, surface, config_path, seed, out_dir, force):
    """Estimate the mapping label of an unseen domain."""
    checkpoint = load_checkpoint(checkpoint_dir, device=settings.resolve_device())
    config = _run_config(checkpoint, config_path, seed, {
        "grid_search.epsilon": epsilon,
        "grid_search.coarse": coarse,
        "grid_search.fine": fine,
        "grid_search.strategy": "exhaustive" if exhaustive else None,
        "grid_search.gradient_refine": True if gradient else None,
    })
    grid = config.grid_search

    dataset = load_dataset(calibration_dir)
    if domain is None:
        if not dataset.held_out_domains:
            raise ValidationError("Calibration dataset has no held-out domain; pass --domain")
        domain = dataset.held_out_domains[0].spec.name
    source = dataset.domain(domain)

    pairs = []
    for subject in source.subjects_in(split):
        keep = content_slices(subject.standard.voxels, checkpoint.config.train.air_threshold)
        pairs.extend(p for p, k in zip(subject.pairs(source.spec.index), keep) if k)
    if max_slices is not None:
        pairs = pairs[:max_slices]

    objective = objective_for_checkpoint(checkpoint, pairs, grid.batch_size)
    estimate = estimate_label(objective, config=grid, domain_count=checkpoint.domain_count,
                              workers=settings.num_workers)
    if grid.gradient_refine:
        estimate = refine_label_gradient(objective, estimate, grid)

    out = _prepare_out(Path(out_dir), force)
    payload = {
        **estimate.to_dict(),
        "domain": domain,
        "calibration_slices": len(pairs),
        "checkpoint": str(checkpoint_dir),
        "config_hash": checkpoint.config.config_hash(),
        "seed": config.seed,
    }
    _write_json(out / "label.json", payload)
    if surface:
        estimate.write_surface_csv(out / "surface.csv")
    click.echo(json.dumps({"domain": domain, "label": payload["label"], "objective": payload["objective"]}))


@cli.command()
@click.option('--checkpoint', 'checkpoint_dir', type=click.Path(exists=True, file_okay=False), required=True)
@click.option('--dataset', 'dataset_dir', type=click.Path(exists=True, file_okay=False), required=True)
@click.option('--label', default=None, help='Comma-separated label applied to every evaluated domain')
@click.option('--label-file', type=click.Path(exists=True, dir_okay=False), multiple=True,
              help='label.json written by estimate-label (applies to its domain)')
@click.option('--domain', 'domains', multiple=True, help='Restrict to these domains')
@click.option('--split', default='val', show_default=True)
@click.option('--baseline', is_flag=True, help='Also score the uncorrected short scans')
@click.option('--per-slice', is_flag=True)
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False), default=None,
              help='YAML whose metrics section replaces the checkpoint one')
@click.option('--seed', type=int, default=None)
@click.option('--out', 'out_dir', type=click.Path(file_okay=False), required=True)
@click.option('--force', is_flag=True)
@handle_errors
def evaluate(checkpoint_dir, dataset_dir, label, label_file, domains, split, baseline, per_slice, config_path, seed,
             out_dir, force):
    """Correct a dataset split and write the metric report."""
    checkpoint = load_checkpoint(checkpoint_dir, device=settings.resolve_device())
    config_hash = checkpoint.config.config_hash()
    config = _run_config(checkpoint, config_path, seed, {})
    checkpoint = replace(checkpoint, config=config)
    dataset = load_dataset(dataset_dir)

    labels = {}
    for path in label_file:
        with open(path, 'r') as f:
            data = json.load(f)
        if "domain" not in data or "label" not in data:
            raise ValidationError(f"Label file {path} needs 'domain' and 'label'", path=str(path))
        labels[data["domain"]] = data["label"]

    report = evaluate_dataset(
        checkpoint, dataset, split=split, label=_parse_label(label), labels=labels,
        domains=list(domains) or None, baseline=baseline,
        per_slice=per_slice or config.metrics.per_slice,
    )
    out = _prepare_out(Path(out_dir), force)
    write_metric_report(report, out, extra={
        "checkpoint": str(checkpoint_dir),
        "dataset": str(dataset_dir),
        "labels": labels,
        "config_hash": config_hash,
        "seed": config.seed,
    })
    click.echo(json.dumps(report.aggregate(), indent=2, default=str))


@cli.command()
@click.option('--metrics', 'metric_dirs', multiple=True, required=True,
              help="Metric report directory, optionally 'method=dir'")
@click.option('--no-plots', is_flag=True)
@click.option('--out', 'out_dir', type=click.Path(file_okay=False), required=True)
@click.option('--force', is_flag=True)
@handle_errors
def report(metric_dirs, no_plots, out_dir, force):
    """Agreement analysis of region ratios and the ablation summary table."""
    frames = {}
    for entry in metric_dirs:
        method, _, path = entry.rpartition('=')
        path = Path(path)
        if not method:
            report_dir = path if path.is_dir() else path.parent
            summary_path = report_dir / "summary.json"
            method = report_dir.name
            if summary_path.exists():
                with open(summary_path, 'r') as f:
                    method = json.load(f).get("mode", method)
        frames[method] = load_metric_frame(path)

    out = _prepare_out(Path(out_dir), force)
    summary: Dict[str, Any] = {"methods": list(frames)}
    summary["ablation"] = {k: str(v) for k, v in write_ablation_table(ablation_table(frames), out).items()}

    agreement = {}
    for method, frame in frames.items():
        if "ratio_corrected" not in frame or "ratio_reference" not in frame:
            continue
        paired = frame[["ratio_corrected", "ratio_reference"]].dropna()
        if len(paired) < 3:
            logger.warning("agreement_skipped", method=method, pairs=len(paired))
            continue
        agreement[method] = write_agreement(
            paired["ratio_corrected"].to_numpy(), paired["ratio_reference"].to_numpy(),
            out, name=f"{method}_ratio", plots=not no_plots,
        )
    summary["agreement"] = agreement
    _write_json(out / "report.json", summary)
    click.echo(json.dumps(summary, indent=2, default=str))


if __name__ == "__main__":
    cli()
