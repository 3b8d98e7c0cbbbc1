"""
Dataset-level evaluation of checkpoints and the training-mode ablation
"""
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

from ..data.dataset import PairedDataset
from ..metrics.agreement import region_ratio
from ..metrics.quality import MetricReport, evaluate_volume
from ..models.conditioning import MappingLabel
from ..utils.config import ExperimentConfig, TrainingMode
from ..utils.errors import ValidationError
from ..utils.logging_config import get_logger
from .checkpoint import Checkpoint
from .inference import infer
from .losses import LossBreakdown
from .trainer import Trainer

logger = get_logger(__name__)


def _ratio(voxels, masks) -> Optional[float]:
    if "target" not in masks or "reference" not in masks:
        return None
    try:
        return region_ratio(voxels, masks["target"], masks["reference"])
    except ValidationError:
        return None


def evaluate_dataset(
    checkpoint: Checkpoint,
    dataset: PairedDataset,
    split: str = "val",
    label: Optional[Sequence[float]] = None,
    labels: Optional[Mapping[str, Sequence[float]]] = None,
    domains: Optional[Sequence[str]] = None,
    baseline: bool = False,
    per_slice: bool = False,
) -> MetricReport:
    """
    Correct every subject of a split and score it against its standard scan

    Args:
        checkpoint: trained networks
        dataset: dataset to evaluate
        split: subject split
        label: one label for every domain (overrides the domain one-hot labels)
        labels: per-domain labels by name, e.g. estimated labels of held-out domains
        domains: restrict evaluation to these domain names
        baseline: also score the uncorrected short scans
        per_slice: keep per-slice series

    Returns:
        MetricReport with one row per volume
    """
    metrics_config = checkpoint.config.metrics
    report = MetricReport(metadata={"split": split, "mode": checkpoint.mode.value})

    for domain in dataset.domains:
        name = domain.spec.name
        if domains is not None and name not in domains:
            continue
        c = label if label is not None else (labels or {}).get(name)
        if c is None and domain.spec.one_hot_label is not None and checkpoint.domain_count == dataset.domain_count:
            c = domain.spec.one_hot_label.to_list()
        if c is None and checkpoint.mode.uses_labels:
            logger.warning("domain_skipped_without_label", domain=name)
            continue

        for subject in domain.subjects_in(split):
            corrected = infer(checkpoint, subject.short, c, batch_size=checkpoint.config.grid_search.batch_size)
            metrics = evaluate_volume(
                corrected.voxels,
                subject.standard.voxels,
                subject_id=subject.subject_id,
                domain=name,
                baseline=subject.short.voxels if baseline else None,
                alpha1=metrics_config.ssim_alpha1,
                alpha2=metrics_config.ssim_alpha2,
                per_slice=per_slice,
            )
            metrics.ratio_corrected = _ratio(corrected.voxels, subject.masks)
            metrics.ratio_reference = _ratio(subject.standard.voxels, subject.masks)
            metrics.ratio_short = _ratio(subject.short.voxels, subject.masks)
            report.add(metrics)

        logger.info("domain_evaluated", domain=name, subjects=len(domain.subjects_in(split)),
                    label=list(c) if c is not None else None)

    if not report.volumes:
        raise ValidationError(f"No subjects evaluated in split '{split}'", split=split)
    return report


@dataclass
class ModeRun:
    mode: TrainingMode
    report: MetricReport
    histories: Dict[str, List[LossBreakdown]] = field(default_factory=dict)
    checkpoints: Dict[str, Checkpoint] = field(default_factory=dict)


def evaluate_modes(
    dataset: PairedDataset,
    config: ExperimentConfig,
    modes: Sequence[TrainingMode] = tuple(TrainingMode),
    epochs: Optional[int] = None,
    device: str = "cpu",
    split: str = "val",
) -> Dict[TrainingMode, ModeRun]:
    """
    Train and evaluate every requested mode on the same dataset.

    Single-domain modes train one network per training domain and are scored
    on that domain only; multi-domain modes train one network on all of them.
    """
    runs: Dict[TrainingMode, ModeRun] = {}
    for mode in modes:
        mode_config = config.model_copy(update={"train": config.train.model_copy(update={"mode": mode})})
        if mode.single_domain:
            report = MetricReport(metadata={"split": split, "mode": mode.value})
            run = ModeRun(mode=mode, report=report)
            for domain in dataset.training_domains:
                view = dataset.single_domain(domain.spec.name)
                result = Trainer(mode_config, domain_count=1, device=device).fit(view, epochs=epochs)
                scored = evaluate_dataset(result.checkpoint, view, split=split, baseline=True)
                for metrics in scored.volumes:
                    metrics.domain = domain.spec.name
                    report.add(metrics)
                run.histories[domain.spec.name] = result.history
                run.checkpoints[domain.spec.name] = result.checkpoint
        else:
            result = Trainer(mode_config, domain_count=dataset.domain_count, device=device).fit(dataset, epochs=epochs)
            report = evaluate_dataset(
                result.checkpoint, dataset, split=split, baseline=True,
                domains=[d.spec.name for d in dataset.training_domains],
            )
            run = ModeRun(mode=mode, report=report, histories={"all": result.history},
                          checkpoints={"all": result.checkpoint})
        runs[mode] = run
        logger.info("mode_evaluated", mode=mode.value, volumes=len(run.report.volumes))
    return runs


def label_specificity(checkpoint: Checkpoint, dataset: PairedDataset, split: str = "val") -> Dict[str, Dict[str, float]]:
    """
    Mean NRMSE of every training domain under every one-hot label.

    Returns {domain name: {label domain name: mean NRMSE}}.
    """
    table: Dict[str, Dict[str, float]] = {}
    training = sorted(dataset.training_domains, key=lambda d: d.spec.index)
    for domain in training:
        row = {}
        for other in training:
            label = MappingLabel.one_hot(other.spec.index, checkpoint.domain_count).to_list()
            report = evaluate_dataset(checkpoint, dataset, split=split, label=label, domains=[domain.spec.name])
            row[other.spec.name] = float(report.frame()["nrmse"].mean())
        table[domain.spec.name] = row
    return table
