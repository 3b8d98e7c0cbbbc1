"""
Min-max training loop over pooled multi-domain slice pairs
"""
import random
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional

import numpy as np
import pandas as pd
import torch
import torch.nn as nn

from ..data.dataset import PairedDataset
from ..data.preprocessing import content_slices, intensity_scale
from ..models.networks import build_discriminator, build_generator
from ..utils.config import ExperimentConfig, TrainingMode
from ..utils.errors import ConfigurationError, ValidationError
from ..utils.logging_config import get_logger
from .checkpoint import Checkpoint
from .losses import (
    DomainWeights,
    LossBreakdown,
    adversarial_losses,
    cycle_loss,
    domain_weights,
    ensure_finite,
    generator_objective,
    weighted_ls_loss,
)

logger = get_logger(__name__)

LOSS_COLUMNS = ["epoch", "adv_g", "adv_d", "cyc", "wls", "total_g", "total_d"]


def set_seed(seed: int, deterministic: bool = True) -> None:
    """Seed python, numpy and torch; optionally force deterministic kernels"""
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True, warn_only=True)
        torch.backends.cudnn.benchmark = False


def set_requires_grad(nets: List[nn.Module], requires_grad: bool) -> None:
    for net in nets:
        for p in net.parameters():
            p.requires_grad = requires_grad


@dataclass
class SliceBatch:
    z: torch.Tensor
    x: torch.Tensor
    domain: torch.Tensor
    labels: Optional[torch.Tensor] = None

    def __len__(self) -> int:
        return self.z.shape[0]


class PooledSlices:
    """
    All training pairs of all domains stacked into tensors.

    Batches are drawn uniformly from the pooled set; the order of every
    epoch comes from a generator seeded with (seed, epoch).
    """

    def __init__(self, z: torch.Tensor, x: torch.Tensor, domain: torch.Tensor, domain_count: int,
                 with_labels: bool, seed: int = 0):
        if z.shape[0] == 0:
            raise ValidationError("Training set is empty")
        self.z = z
        self.x = x
        self.domain = domain
        self.domain_count = domain_count
        self.with_labels = with_labels
        self.seed = seed

    def __len__(self) -> int:
        return self.z.shape[0]

    def sizes(self) -> List[int]:
        """Pooled pair count per domain index"""
        return torch.bincount(self.domain, minlength=self.domain_count).tolist()

    def batches(self, batch_size: int, epoch: int, device: torch.device) -> Iterator[SliceBatch]:
        generator = torch.Generator().manual_seed(self.seed * 100003 + epoch)
        order = torch.randperm(len(self), generator=generator)
        eye = torch.eye(self.domain_count, dtype=self.z.dtype)
        for start in range(0, len(self), batch_size):
            idx = order[start:start + batch_size]
            domain = self.domain[idx]
            labels = eye[domain].to(device) if self.with_labels else None
            yield SliceBatch(
                z=self.z[idx].to(device),
                x=self.x[idx].to(device),
                domain=domain.to(device),
                labels=labels,
            )


def _kept_slices(standard: np.ndarray, exclude_air: bool, air_threshold: float) -> np.ndarray:
    if not exclude_air:
        return np.ones(standard.shape[0], dtype=bool)
    return content_slices(standard, air_threshold)


def training_slice_counts(dataset: PairedDataset, exclude_air: bool = True, air_threshold: float = 0.01) -> List[int]:
    """Per-domain count of the training pairs that survive air-slice exclusion"""
    counts = [0] * dataset.domain_count
    for domain in dataset.training_domains:
        for subject in domain.subjects_in("train"):
            counts[domain.spec.index] += int(_kept_slices(subject.standard.voxels, exclude_air, air_threshold).sum())
    return counts


def collect_training_slices(
    dataset: PairedDataset,
    scale: float,
    exclude_air: bool = True,
    air_threshold: float = 0.01,
    with_labels: bool = True,
    seed: int = 0,
) -> PooledSlices:
    """Stack training pairs, dropping air slices of each standard-scan volume"""
    zs, xs, domains = [], [], []
    dropped = 0
    for domain in dataset.training_domains:
        for subject in domain.subjects_in("train"):
            keep = _kept_slices(subject.standard.voxels, exclude_air, air_threshold)
            dropped += int((~keep).sum())
            zs.append(subject.short.voxels[keep])
            xs.append(subject.standard.voxels[keep])
            domains.extend([domain.spec.index] * int(keep.sum()))

    if not domains:
        raise ValidationError("No training slices left after air-slice exclusion", dropped=dropped)

    z = torch.from_numpy(np.concatenate(zs)[:, None] / scale).float()
    x = torch.from_numpy(np.concatenate(xs)[:, None] / scale).float()
    logger.info("training_slices_collected", pairs=len(domains), dropped_air=dropped, scale=scale)
    return PooledSlices(z, x, torch.tensor(domains, dtype=torch.long), dataset.domain_count, with_labels, seed)


@dataclass
class TrainingResult:
    checkpoint: Checkpoint
    history: List[LossBreakdown] = field(default_factory=list)
    batch_log: List[Dict[str, float]] = field(default_factory=list)
    duration: float = 0.0

    def history_frame(self) -> pd.DataFrame:
        rows = [{"epoch": i, **b.to_dict()} for i, b in enumerate(self.history)]
        return pd.DataFrame(rows, columns=LOSS_COLUMNS)

    def batch_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.batch_log)

    def write_loss_csv(self, path) -> None:
        self.history_frame().to_csv(path, index=False)


class Trainer:
    """Alternating discriminator / generator updates with Adam"""

    def __init__(self, config: ExperimentConfig, domain_count: int, device: str = "cpu"):
        self.mode: TrainingMode = config.train.mode
        self._check_mode(domain_count)

        generator_config = config.generator.model_copy(
            update={"domain_count": domain_count, "conditioned": self.mode.uses_labels}
        )
        self.config = config.model_copy(update={"generator": generator_config})
        self.train_config = self.config.train
        self.device = torch.device(device)

        set_seed(self.train_config.seed, self.train_config.deterministic)

        std = self.train_config.init_std
        self.generator = build_generator(generator_config, std).to(self.device)
        self.backward = build_generator(generator_config, std).to(self.device)
        self.disc_x = build_discriminator(self.config.discriminator, std).to(self.device)
        self.disc_z = build_discriminator(self.config.discriminator, std).to(self.device)

        betas = (self.train_config.beta1, self.train_config.beta2)
        lr = self.train_config.learning_rate
        self.opt_g = torch.optim.Adam(
            list(self.generator.parameters()) + list(self.backward.parameters()), lr=lr, betas=betas
        )
        self.opt_d = torch.optim.Adam(
            list(self.disc_x.parameters()) + list(self.disc_z.parameters()), lr=lr, betas=betas
        )
        self.weights: Optional[DomainWeights] = None

    def _check_mode(self, domain_count: int) -> None:
        if domain_count < 1:
            raise ValidationError("Training needs at least one domain")
        if self.mode.single_domain and domain_count > 1:
            raise ConfigurationError(
                f"Mode {self.mode.value} is single-domain but the dataset has {domain_count} domains; "
                f"train on one domain or use --mode m3, m4 or proposed",
                mode=self.mode.value, domain_count=domain_count,
            )
        if self.mode.uses_labels and domain_count < 2:
            raise ConfigurationError(
                "Mode proposed needs at least two training domains", mode=self.mode.value, domain_count=domain_count
            )

    def train_step(self, batch: SliceBatch, epoch: int = 0, index: int = 0) -> LossBreakdown:
        """One discriminator update followed by one generator/backward update"""
        tc = self.train_config
        c = batch.labels
        z, x = batch.z, batch.x

        # discriminator step
        set_requires_grad([self.disc_x, self.disc_z], True)
        with torch.no_grad():
            fake_x = self.generator(z, c)
            fake_z = self.backward(x, c)
        dx_real = self.disc_x(x)
        dz_real = self.disc_z(z)
        _, loss_d = adversarial_losses(dx_real, self.disc_x(fake_x), dz_real, self.disc_z(fake_z), tc.gan_convention)
        ensure_finite(loss_d, "adv_d", epoch, index)
        self.opt_d.zero_grad()
        loss_d.backward()
        self.opt_d.step()

        # generator step
        set_requires_grad([self.disc_x, self.disc_z], False)
        fake_x = self.generator(z, c)
        fake_z = self.backward(x, c)
        adv_g, _ = adversarial_losses(
            dx_real.detach(), self.disc_x(fake_x), dz_real.detach(), self.disc_z(fake_z), tc.gan_convention
        )
        if self.mode.uses_cycle:
            cyc = cycle_loss(z, x, self.backward(fake_x, c), self.generator(fake_z, c))
        else:
            cyc = torch.zeros((), device=z.device)
        weights = self.weights if self.mode.uses_domain_weights else None
        wls = weighted_ls_loss(fake_x - x, fake_z - z, batch.domain, weights, tc.wls_reduction)
        loss_g = generator_objective(adv_g, cyc, wls, tc.lambda_cyc, tc.lambda_wls)

        breakdown = LossBreakdown(
            adv_g=float(adv_g), adv_d=float(loss_d), cyc=float(cyc), wls=float(wls),
            total_g=float(loss_g), total_d=float(loss_d),
            lambda_cyc=tc.lambda_cyc, lambda_wls=tc.lambda_wls,
        ).check_finite(epoch, index)

        self.opt_g.zero_grad()
        loss_g.backward()
        self.opt_g.step()
        set_requires_grad([self.disc_x, self.disc_z], True)
        return breakdown

    def _networks(self) -> List[nn.Module]:
        return [self.generator, self.backward, self.disc_x, self.disc_z]

    def fit(
        self,
        dataset: PairedDataset,
        epochs: Optional[int] = None,
        on_epoch_end: Optional[Callable[[int, LossBreakdown], None]] = None,
    ) -> TrainingResult:
        """
        Train on the pooled training split of every training domain

        Args:
            dataset: paired multi-domain dataset
            epochs: overrides the configured epoch count
            on_epoch_end: callback receiving (epoch, averaged losses)

        Returns:
            TrainingResult with the final checkpoint and loss logs
        """
        start = time.time()
        tc = self.train_config
        epochs = epochs or tc.epochs

        scale = intensity_scale(
            s.standard for d in dataset.training_domains for s in d.subjects_in("train")
        )
        pool = collect_training_slices(
            dataset, scale, tc.exclude_air_slices, tc.air_threshold, self.mode.uses_labels, tc.seed
        )
        sizes = pool.sizes()
        self.weights = domain_weights(sizes)

        logger.info(
            "training_started",
            mode=self.mode.value,
            losses=self.mode.description,
            domains=dataset.domain_count,
            pairs=len(pool),
            weights=self.weights.to_list(),
            epochs=epochs,
            batch_size=tc.batch_size,
        )

        history: List[LossBreakdown] = []
        batch_log: List[Dict[str, float]] = []
        for epoch in range(epochs):
            for net in self._networks():
                net.train()
            epoch_losses = []
            for index, batch in enumerate(pool.batches(tc.batch_size, epoch, self.device)):
                losses = self.train_step(batch, epoch, index)
                epoch_losses.append(losses)
                batch_log.append({"epoch": epoch, "batch": index, **losses.to_dict()})
                logger.debug("batch_done", epoch=epoch, batch=index, total_g=losses.total_g, total_d=losses.total_d)

            averaged = LossBreakdown.mean(epoch_losses)
            history.append(averaged)
            logger.info("epoch_done", epoch=epoch, batches=len(epoch_losses), **{
                k: round(v, 6) for k, v in averaged.to_dict().items() if k in LOSS_COLUMNS
            })
            if on_epoch_end:
                on_epoch_end(epoch, averaged)

        for net in self._networks():
            net.eval()

        checkpoint = Checkpoint(
            generator=self.generator, backward=self.backward, disc_x=self.disc_x, disc_z=self.disc_z,
            config=self.config, epoch=epochs, intensity_scale=scale,
            rng_state=torch.get_rng_state(),
            extra={"domain_weights": self.weights.to_list(), "train_sizes": sizes},
        )
        duration = time.time() - start
        logger.info("training_finished", mode=self.mode.value, epochs=epochs, duration=round(duration, 2))
        return TrainingResult(checkpoint=checkpoint, history=history, batch_log=batch_log, duration=duration)


def train(dataset: PairedDataset, config: ExperimentConfig, device: str = "cpu",
          epochs: Optional[int] = None) -> TrainingResult:
    """Build a trainer sized to the dataset and run it"""
    trainer = Trainer(config, domain_count=dataset.domain_count, device=device)
    return trainer.fit(dataset, epochs=epochs)
