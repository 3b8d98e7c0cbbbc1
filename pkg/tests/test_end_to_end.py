"""
Synthetic restoration experiments. Slow: run with ``pytest -m slow``.
"""
import numpy as np
import pytest

from conftest import tiny_experiment
from lib.data.dataset import build_dataset
from lib.data.preprocessing import content_slices
from lib.data.synthesis import default_domains, mixture_domain
from lib.estimation.label_search import estimate_label, objective_for_checkpoint
from lib.metrics.report import ablation_table
from lib.models.conditioning import MappingLabel
from lib.training.evaluation import evaluate_dataset, evaluate_modes, label_specificity
from lib.training.inference import infer
from lib.training.trainer import train
from lib.utils.config import (
    DataConfig,
    DiscriminatorConfig,
    ExperimentConfig,
    GeneratorConfig,
    GridSearchConfig,
    TrainConfig,
    TrainingMode,
)

pytestmark = pytest.mark.slow

DIMS = (16, 32, 32)
SUBJECTS = [16, 10, 6]


@pytest.fixture(scope="module")
def experiment():
    return ExperimentConfig(
        seed=0,
        data=DataConfig(dims=list(DIMS), subjects_per_domain=SUBJECTS),
        generator=GeneratorConfig(stages=3, channels=[16, 32, 64], domain_count=3),
        discriminator=DiscriminatorConfig(base_channels=16, layers=3),
        train=TrainConfig(epochs=30, batch_size=16, seed=0),
        grid_search=GridSearchConfig(),
    )


@pytest.fixture(scope="module")
def dataset():
    a, b, c = default_domains(3)
    return build_dataset([a, b, c, mixture_domain(a, c, 0.5)], SUBJECTS + [3], DIMS, seed=0)


@pytest.fixture(scope="module")
def trained(dataset, experiment):
    return train(dataset, experiment).checkpoint


def calibration_pairs(domain, threshold):
    pairs = []
    for subject in domain.subjects_in("val"):
        keep = content_slices(subject.standard.voxels, threshold)
        pairs.extend(p for p, k in zip(subject.pairs(domain.spec.index), keep) if k)
    return pairs


def test_correction_beats_short_scan_on_every_domain(trained, dataset):
    report = evaluate_dataset(trained, dataset, baseline=True,
                              domains=[d.spec.name for d in dataset.training_domains])
    frame = report.frame()

    for name, group in frame.groupby("domain"):
        assert group["nrmse"].mean() < group["baseline_nrmse"].mean(), name


def test_wrong_labels_do_not_help(trained, dataset):
    table = label_specificity(trained, dataset)

    specific = sum(
        all(row[other] >= row[name] for other in row if other != name)
        for name, row in table.items()
    )
    assert specific >= 2


def test_training_domain_calibration_recovers_one_hot(trained, dataset, experiment):
    threshold = experiment.train.air_threshold
    for domain in dataset.training_domains:
        estimate = estimate_label(trained, calibration_pairs(domain, threshold), experiment.grid_search)
        label = np.array(estimate.label.to_list())

        assert int(np.argmax(label)) == domain.spec.index
        assert label[domain.spec.index] >= 1.0 - experiment.grid_search.fine - 1e-9


def test_mixture_calibration_is_no_worse_than_one_hot(trained, dataset, experiment):
    pairs = calibration_pairs(dataset.held_out_domains[0], experiment.train.air_threshold)
    objective = objective_for_checkpoint(trained, pairs)

    estimate = estimate_label(trained, pairs, experiment.grid_search)
    one_hot = min(objective(MappingLabel.one_hot(i, 3).values) for i in range(3))

    assert estimate.objective <= one_hot + 1e-9


def test_ablation_matrix(toy_dataset):
    runs = evaluate_modes(toy_dataset, tiny_experiment(), epochs=2)

    table = ablation_table({mode.value: run.report.frame() for mode, run in runs.items()})
    assert list(table.index) == ["short scan", "m1", "m2", "m3", "m4", "proposed"]

    for mode in (TrainingMode.M1, TrainingMode.M2):
        for name, checkpoint in runs[mode].checkpoints.items():
            volume = toy_dataset.domain(name).subjects[0].short
            first = infer(checkpoint, volume, [1.0])
            second = infer(checkpoint, volume, [0.0])
            assert np.array_equal(first.voxels, second.voxels)
