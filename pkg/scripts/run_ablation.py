#!/usr/bin/env python3
"""
Run Ablation
Trains and evaluates every training mode on one dataset, then writes the
ablation summary table and the label-specificity check of the proposed mode
"""
import argparse
import json
import sys
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List

# Add project root to Python path
sys.path.insert(0, str(Path(__file__).parent.parent))

from config import settings
from lib.data.dataset import PairedDataset, build_dataset, load_dataset, save_dataset
from lib.data.synthesis import default_domains, domains_from_config
from lib.metrics.report import ablation_table, write_ablation_table, write_metric_report
from lib.training.checkpoint import save_checkpoint
from lib.training.evaluation import evaluate_modes, label_specificity
from lib.utils.config import ExperimentConfig, TrainingMode, load_experiment_config
from lib.utils.errors import RestorationError
from lib.utils.logging_config import get_logger, setup_logging


def prepare_dataset(config: ExperimentConfig, dataset_dir: str, out_dir: Path) -> PairedDataset:
    """Load an existing dataset or synthesize one from the configuration"""
    if dataset_dir:
        return load_dataset(dataset_dir)
    count = len(config.data.domains) or len(config.data.subjects_per_domain)
    specs = domains_from_config(config.data.domains, count) if config.data.domains else default_domains(count)
    dataset = build_dataset(
        specs, config.data.subjects_per_domain[:count], config.data.dims, config.seed,
        phantom=config.data.phantom, amplitude=config.data.amplitude, spacing=config.data.spacing_mm,
        val_fraction=config.data.val_fraction, multiple=config.data.pad_multiple,
        num_workers=settings.num_workers,
    )
    save_dataset(dataset, out_dir / "dataset", force=True, extra={"config_hash": config.config_hash()})
    return dataset


def run_ablation(config: ExperimentConfig, dataset: PairedDataset, modes: List[TrainingMode],
                 epochs: int, out_dir: Path, device: str) -> Dict[str, Any]:
    """
    Run each mode as one step and collect per-step status and duration

    Args:
        config: Experiment configuration
        dataset: Dataset shared by every mode
        modes: Modes to run, in order
        epochs: Epochs per training run
        out_dir: Output directory

    Returns:
        Dictionary with results from all steps
    """
    logger = get_logger(__name__)
    overall_start = datetime.utcnow()

    results: Dict[str, Any] = {
        "started_at": overall_start.isoformat(),
        "completed_at": None,
        "duration_seconds": None,
        "pipeline_status": "running",
        "config_hash": config.config_hash(),
        "steps": {},
    }
    frames = {}

    for number, mode in enumerate(modes, start=1):
        logger.info("ablation_step_started", step=number, mode=mode.value, losses=mode.description)
        step_start = datetime.utcnow()
        try:
            run = evaluate_modes(dataset, config, [mode], epochs=epochs, device=device)[mode]
            mode_dir = out_dir / mode.value
            write_metric_report(run.report, mode_dir / "metrics", extra={"mode": mode.value, "epochs": epochs})
            for name, checkpoint in run.checkpoints.items():
                save_checkpoint(checkpoint, mode_dir / "checkpoints" / name)
            frames[mode.description] = run.report.frame()

            step = {"status": "success", "volumes": len(run.report.volumes)}
            if mode is TrainingMode.PROPOSED:
                table = label_specificity(run.checkpoints["all"], dataset)
                with open(mode_dir / "label_specificity.json", 'w') as f:
                    json.dump(table, f, indent=2)
                step["label_specific_domains"] = sum(
                    1 for name, row in table.items()
                    if all(row[name] <= v for other, v in row.items() if other != name)
                )
        except RestorationError as e:
            logger.error("ablation_step_failed", mode=mode.value, error=e.kind, message=e.message)
            step = {"status": "error", "error": e.to_dict()}

        step["duration_seconds"] = (datetime.utcnow() - step_start).total_seconds()
        results["steps"][mode.value] = step

    if frames:
        table = ablation_table(frames)
        results["table"] = {k: str(v) for k, v in write_ablation_table(table, out_dir).items()}

    overall_end = datetime.utcnow()
    results["completed_at"] = overall_end.isoformat()
    results["duration_seconds"] = (overall_end - overall_start).total_seconds()

    successful_steps = sum(1 for step in results["steps"].values() if step["status"] == "success")
    if successful_steps == len(results["steps"]):
        results["pipeline_status"] = "success"
    elif successful_steps > 0:
        results["pipeline_status"] = "partial_success"
    else:
        results["pipeline_status"] = "failed"
    return results


def main():
    """Main function with CLI argument parsing"""
    parser = argparse.ArgumentParser(
        description="Run the training-mode ablation",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter
    )
    parser.add_argument('--config', help='Experiment YAML', default=None)
    parser.add_argument('--dataset', help='Existing dataset directory (synthesized when omitted)', default=None)
    parser.add_argument('--modes', nargs='+', choices=[m.value for m in TrainingMode],
                        default=[m.value for m in TrainingMode], help='Modes to run')
    parser.add_argument('--epochs', type=int, default=None, help='Epochs per run (config value when omitted)')
    parser.add_argument('--seed', type=int, default=None)
    parser.add_argument('--out', required=True, help='Output directory')
    parser.add_argument('--log-level', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'], default='INFO')

    args = parser.parse_args()

    setup_logging(
        level=args.log_level,
        enable_json=settings.is_production(),
        sentry_config=settings.get_sentry_config(),
    )
    logger = get_logger(__name__)

    try:
        config = load_experiment_config(args.config, {"seed": args.seed, "train.seed": args.seed})
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        config.to_yaml(out_dir / "config.yaml")

        dataset = prepare_dataset(config, args.dataset, out_dir)
        epochs = args.epochs or config.train.epochs
        logger.info("ablation_started", modes=args.modes, epochs=epochs, domains=dataset.domain_count)

        result = run_ablation(
            config, dataset, [TrainingMode(m) for m in args.modes], epochs, out_dir, settings.resolve_device()
        )
        with open(out_dir / "results.json", 'w') as f:
            json.dump(result, f, indent=2, default=str)

        print("\n" + "=" * 50)
        print("ABLATION SUMMARY")
        print("=" * 50)
        print(f"Status: {result['pipeline_status']}")
        print(f"Duration: {result['duration_seconds']:.1f} seconds")
        for mode, step in result["steps"].items():
            print(f"{mode:>9}: {step['status']} ({step['duration_seconds']:.1f} s)")
        print("=" * 50)

        if result["pipeline_status"] != "success":
            sys.exit(2)

    except RestorationError as e:
        logger.error("ablation_failed", error=e.kind, message=e.message)
        print(json.dumps(e.to_dict()), file=sys.stderr)
        sys.exit(e.exit_code)
    except KeyboardInterrupt:
        logger.info("ablation_interrupted")
        sys.exit(0)
    except Exception as e:
        logger.exception("ablation_crashed", error=type(e).__name__)
        print(json.dumps({"error": "runtime_error", "type": type(e).__name__, "message": str(e)}), file=sys.stderr)
        sys.exit(2)


if __name__ == "__main__":
    main()
