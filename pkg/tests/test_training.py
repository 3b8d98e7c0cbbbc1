import json
import math
from dataclasses import replace

import numpy as np
import pytest
import torch

from conftest import passthrough_checkpoint, tiny_experiment
from lib.data.dataset import PairedDataset
from lib.data.volume import Volume
from lib.training.checkpoint import MANIFEST_NAME, NETWORKS, load_checkpoint, save_checkpoint
from lib.training.inference import infer, resolve_label
from lib.training.losses import domain_weights
from lib.training.trainer import (
    LOSS_COLUMNS,
    PooledSlices,
    Trainer,
    collect_training_slices,
    train,
    training_slice_counts,
)
from lib.utils.config import TrainingMode
from lib.utils.errors import ConfigurationError, IngestionError, NumericalError


@pytest.fixture(scope="module")
def trained(toy_dataset):
    return train(toy_dataset, tiny_experiment(), epochs=1)


class TestTrainer:
    def test_single_domain_mode_refuses_multi_domain_data(self):
        with pytest.raises(ConfigurationError) as info:
            Trainer(tiny_experiment(TrainingMode.M1), domain_count=3)

        assert "single-domain" in info.value.message

    def test_proposed_mode_needs_two_domains(self):
        with pytest.raises(ConfigurationError):
            Trainer(tiny_experiment(), domain_count=1)

    def test_generators_follow_mode(self):
        conditioned = Trainer(tiny_experiment(), domain_count=3)
        plain = Trainer(tiny_experiment(TrainingMode.M4), domain_count=3)

        assert all(site.conditioned for site in conditioned.generator.norm_sites())
        assert not any(site.conditioned for site in plain.generator.norm_sites())

    def test_one_epoch_logs_finite_losses(self, trained):
        assert len(trained.history) == 1
        assert trained.batch_log
        for row in trained.batch_log:
            for term in ("adv_g", "adv_d", "cyc", "wls", "total_g", "total_d"):
                assert math.isfinite(row[term])

    def test_loss_csv_columns(self, trained, tmp_path):
        path = tmp_path / "losses.csv"

        trained.write_loss_csv(path)

        assert path.read_text().splitlines()[0].split(",") == LOSS_COLUMNS

    def test_checkpoint_records_scale_and_weights(self, trained, toy_dataset):
        checkpoint = trained.checkpoint

        assert checkpoint.intensity_scale > 1.0
        assert sum(checkpoint.extra["domain_weights"]) == pytest.approx(1.0)
        assert checkpoint.extra["train_sizes"] == training_slice_counts(toy_dataset)

    def test_training_is_deterministic(self, toy_dataset):
        first = train(toy_dataset, tiny_experiment(), epochs=1).checkpoint
        second = train(toy_dataset, tiny_experiment(), epochs=1).checkpoint

        for name, net in first.networks().items():
            other = second.networks()[name].state_dict()
            for key, tensor in net.state_dict().items():
                assert torch.equal(tensor, other[key]), f"{name}.{key}"

    def test_cycle_term_zero_without_cycle_mode(self, toy_dataset):
        result = train(toy_dataset.single_domain("domain_a"), tiny_experiment(TrainingMode.M1), epochs=1)

        assert all(row["cyc"] == 0.0 for row in result.batch_log)

    def test_non_finite_loss_is_reported(self, toy_dataset, mocker):
        trainer = Trainer(tiny_experiment(), domain_count=3)
        mocker.patch("lib.training.trainer.cycle_loss", return_value=torch.tensor(float("nan")))

        with pytest.raises(NumericalError) as info:
            trainer.fit(toy_dataset, epochs=1)

        assert info.value.term in ("cyc", "total_g")
        assert info.value.batch == 0


def test_pooled_batches_are_seeded(toy_dataset):
    pool = collect_training_slices(toy_dataset, scale=1000.0, with_labels=True, seed=3)

    first = [b.domain.tolist() for b in pool.batches(4, epoch=0, device=torch.device("cpu"))]
    again = [b.domain.tolist() for b in pool.batches(4, epoch=0, device=torch.device("cpu"))]

    assert first == again
    assert sum(len(b) for b in first) == len(pool)


def test_pooled_labels_are_one_hot():
    pool = PooledSlices(torch.zeros(3, 1, 4, 4), torch.zeros(3, 1, 4, 4), torch.tensor([0, 2, 1]),
                        domain_count=3, with_labels=True)

    batch = next(pool.batches(3, epoch=0, device=torch.device("cpu")))

    assert torch.equal(batch.labels, torch.eye(3)[batch.domain])


def with_empty_first_slice(dataset: PairedDataset, name: str) -> PairedDataset:
    """Copy of the dataset whose standard scans in one domain start with an all-zero slice"""
    domains = []
    for domain in dataset.domains:
        if domain.spec.name == name:
            subjects = []
            for subject in domain.subjects:
                voxels = subject.standard.voxels.copy()
                voxels[0] = 0.0
                subjects.append(replace(subject, standard=subject.standard.with_voxels(voxels)))
            domain = replace(domain, subjects=subjects)
        domains.append(domain)
    return PairedDataset(domains=domains, manifest=dict(dataset.manifest))


def test_air_slices_are_excluded(toy_dataset):
    dataset = with_empty_first_slice(toy_dataset, "domain_a")

    kept = collect_training_slices(dataset, scale=1.0, exclude_air=True)
    everything = collect_training_slices(dataset, scale=1.0, exclude_air=False)

    assert 0 < len(kept) < len(everything)
    assert everything.sizes() == dataset.sizes("train")
    assert kept.sizes() == training_slice_counts(dataset)
    assert kept.sizes()[0] <= dataset.sizes("train")[0] - len(dataset.domain("domain_a").subjects_in("train"))


def test_domain_weights_follow_pooled_counts(toy_dataset):
    dataset = with_empty_first_slice(toy_dataset, "domain_a")
    trainer = Trainer(tiny_experiment(), domain_count=3)

    result = trainer.fit(dataset, epochs=1)

    counts = training_slice_counts(dataset)
    assert counts != dataset.sizes("train")
    assert trainer.weights == domain_weights(counts)
    assert result.checkpoint.extra["train_sizes"] == counts
    assert result.checkpoint.extra["domain_weights"] == domain_weights(counts).to_list()


class TestCheckpoint:
    def test_round_trip_is_bit_exact(self, trained, tmp_path, sample_batch):
        path = save_checkpoint(trained.checkpoint, tmp_path / "ckpt")
        loaded = load_checkpoint(path)
        c = torch.tensor([0.0, 1.0, 0.0])

        trained.checkpoint.eval()
        with torch.no_grad():
            expected = trained.checkpoint.generator(sample_batch, c)
            actual = loaded.generator(sample_batch, c)

        assert torch.equal(expected, actual)
        assert loaded.intensity_scale == trained.checkpoint.intensity_scale
        assert loaded.mode is TrainingMode.PROPOSED

    def test_manifest_lists_every_tensor(self, trained, tmp_path):
        path = save_checkpoint(trained.checkpoint, tmp_path / "ckpt")
        manifest = json.loads((path / MANIFEST_NAME).read_text())

        for name in NETWORKS:
            listed = {entry["name"] for entry in manifest["tensors"][name]}
            assert listed == set(trained.checkpoint.networks()[name].state_dict())
            assert (path / f"{name}.raw").exists()
        assert manifest["config_hash"] == trained.checkpoint.config.config_hash()

    def test_truncated_blob_is_rejected(self, trained, tmp_path):
        path = save_checkpoint(trained.checkpoint, tmp_path / "ckpt")
        blob = path / "G.raw"
        blob.write_bytes(blob.read_bytes()[:-8])

        with pytest.raises(IngestionError):
            load_checkpoint(path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(IngestionError):
            load_checkpoint(tmp_path)


class TestInference:
    def test_pass_through_checkpoint_returns_input(self):
        config = tiny_experiment(TrainingMode.M3)
        checkpoint = passthrough_checkpoint(config, scale=500.0)
        voxels = np.random.default_rng(0).uniform(0, 1000, size=(10, 18, 22)).astype(np.float32)
        volume = Volume(voxels, spacing=(2.0, 2.0, 2.0))

        out = infer(checkpoint, volume, [1.0, 0.0, 0.0])

        assert out.shape == volume.shape
        assert out.spacing == volume.spacing
        np.testing.assert_allclose(out.voxels, voxels, rtol=1e-5)
        assert "pad_record" not in out.metadata

    def test_label_free_modes_ignore_label(self, toy_dataset):
        config = tiny_experiment(TrainingMode.M1)
        checkpoint = train(toy_dataset.single_domain("domain_b"), config, epochs=1).checkpoint
        volume = toy_dataset.domain("domain_b").subjects[0].short

        a = infer(checkpoint, volume, [1.0])
        b = infer(checkpoint, volume, [0.3])
        c = infer(checkpoint, volume, None)

        assert np.array_equal(a.voxels, b.voxels)
        assert np.array_equal(a.voxels, c.voxels)

    def test_conditioned_mode_checks_label_length(self, trained, toy_dataset):
        volume = toy_dataset.domain("domain_a").subjects[0].short

        with pytest.raises(ConfigurationError):
            infer(trained.checkpoint, volume, [1.0, 0.0])
        with pytest.raises(ConfigurationError):
            resolve_label(trained.checkpoint, None)

    def test_repeated_inference_is_identical(self, trained, toy_dataset):
        volume = toy_dataset.domain("domain_c").subjects[0].short

        first = infer(trained.checkpoint, volume, [0.0, 0.0, 1.0])
        second = infer(trained.checkpoint, volume, [0.0, 0.0, 1.0])

        assert np.array_equal(first.voxels, second.voxels)
        assert first.metadata["mapping_label"] == [0.0, 0.0, 1.0]
