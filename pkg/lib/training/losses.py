"""
Loss terms of the min-max objective and the domain-imbalance weights
"""
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Sequence, Tuple, Union

import math

import numpy as np
import torch
import torch.nn.functional as F

from ..utils.errors import DimensionError, NumericalError, ValidationError

GAN_CONVENTIONS = ("standard", "as_printed")
WLS_REDUCTIONS = ("residual", "squared")


@dataclass(frozen=True)
class DomainWeights:
    """Inverse-frequency per-domain weights, normalized to sum to one"""
    values: Tuple[float, ...]

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, index: int) -> float:
        return self.values[index]

    def to_tensor(self, dtype: torch.dtype = torch.float32, device: Optional[torch.device] = None) -> torch.Tensor:
        return torch.tensor(self.values, dtype=dtype, device=device)

    def to_list(self) -> list:
        return list(self.values)


@dataclass
class LossBreakdown:
    """Per-batch (or per-epoch averaged) loss values"""
    adv_g: float
    adv_d: float
    cyc: float
    wls: float
    total_g: float
    total_d: float
    lambda_cyc: float = 10.0
    lambda_wls: float = 10.0

    TERMS = ("adv_g", "adv_d", "cyc", "wls", "total_g", "total_d")

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)

    def check_finite(self, epoch: Optional[int] = None, batch: Optional[int] = None) -> "LossBreakdown":
        for term in self.TERMS:
            ensure_finite(getattr(self, term), term, epoch, batch)
        return self

    @classmethod
    def mean(cls, items: Sequence["LossBreakdown"]) -> "LossBreakdown":
        if not items:
            raise ValidationError("Cannot average an empty loss log")
        first = items[0]
        averaged = {term: float(np.mean([getattr(b, term) for b in items])) for term in cls.TERMS}
        return cls(**averaged, lambda_cyc=first.lambda_cyc, lambda_wls=first.lambda_wls)


def domain_weights(sizes: Sequence[int]) -> DomainWeights:
    """
    w_i = (1/|S_i|) / sum_j (1/|S_j|)

    Args:
        sizes: number of training samples per domain

    Returns:
        DomainWeights summing to one
    """
    sizes = list(sizes)
    if not sizes:
        raise ValidationError("Domain sizes must not be empty")
    for i, size in enumerate(sizes):
        if size < 1:
            raise ValidationError(f"Domain {i} has size {size}; sizes must be >= 1", domain=i, size=size)

    inverse = 1.0 / np.asarray(sizes, dtype=np.float64)
    return DomainWeights(tuple(float(w) for w in inverse / inverse.sum()))


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{what}: shapes {tuple(a.shape)} and {tuple(b.shape)} differ",
                             left=tuple(a.shape), right=tuple(b.shape))


def adversarial_losses(
    dx_real: torch.Tensor,
    dx_fake: torch.Tensor,
    dz_real: torch.Tensor,
    dz_fake: torch.Tensor,
    convention: str = "standard",
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Least-squares GAN terms for both discriminators

    Standard convention (real -> 1, fake -> 0):
        disc = mean (dx_real-1)^2 + mean dx_fake^2 + mean (dz_real-1)^2 + mean dz_fake^2
        gen  = mean (dx_fake-1)^2 + mean (dz_fake-1)^2
    The ``as_printed`` convention swaps the real and fake targets.

    Returns:
        (generator term, discriminator term)
    """
    if convention not in GAN_CONVENTIONS:
        raise ValidationError(f"Unknown GAN convention '{convention}'", convention=convention)
    _check_same_shape(dx_real, dx_fake, "D_X real/fake score maps")
    _check_same_shape(dz_real, dz_fake, "D_Z real/fake score maps")

    real_target, fake_target = (1.0, 0.0) if convention == "standard" else (0.0, 1.0)

    def sq(scores: torch.Tensor, target: float) -> torch.Tensor:
        return (scores - target).pow(2).mean()

    disc = sq(dx_real, real_target) + sq(dx_fake, fake_target) + sq(dz_real, real_target) + sq(dz_fake, fake_target)
    gen = sq(dx_fake, real_target) + sq(dz_fake, real_target)
    return gen, disc


def cycle_loss(z: torch.Tensor, x: torch.Tensor, z_cycled: torch.Tensor, x_cycled: torch.Tensor) -> torch.Tensor:
    """Pixel-mean squared error of F(G(z)) vs z plus G(F(x)) vs x"""
    _check_same_shape(z_cycled, z, "cycled z")
    _check_same_shape(x_cycled, x, "cycled x")
    return F.mse_loss(z_cycled, z) + F.mse_loss(x_cycled, x)


def weighted_ls_loss(
    forward_residual: torch.Tensor,
    backward_residual: torch.Tensor,
    domain_index: Optional[Union[torch.Tensor, Sequence[int]]],
    weights: Optional[Union[DomainWeights, torch.Tensor]] = None,
    reduction: str = "residual",
) -> torch.Tensor:
    """
    Weighted least-squares loss over both directions

    Args:
        forward_residual: G(z;c) - x, shape (B, ...)
        backward_residual: F(x;c) - z, shape (B, ...)
        domain_index: domain of each sample, shape (B,)
        weights: per-domain weights; None means plain least squares (w = 1)
        reduction: ``residual`` scales the residual by w (w^2 effective),
            ``squared`` scales the squared norm by w

    Returns:
        Scalar loss, averaged over pixels and batch and summed over directions
    """
    if reduction not in WLS_REDUCTIONS:
        raise ValidationError(f"Unknown weighted LS reduction '{reduction}'", reduction=reduction)
    _check_same_shape(forward_residual, backward_residual, "forward/backward residuals")
    if domain_index is None:
        raise ValidationError("Every sample needs a domain index for the weighted LS loss")

    batch = forward_residual.shape[0]
    index = torch.as_tensor(domain_index, dtype=torch.long, device=forward_residual.device).reshape(-1)
    if index.numel() != batch:
        raise ValidationError(
            f"Got {index.numel()} domain indices for a batch of {batch}", indices=int(index.numel()), batch=batch
        )

    if weights is None:
        w = torch.ones(batch, dtype=forward_residual.dtype, device=forward_residual.device)
    else:
        table = weights.to_tensor() if isinstance(weights, DomainWeights) else torch.as_tensor(weights)
        table = table.to(dtype=forward_residual.dtype, device=forward_residual.device)
        if index.min() < 0 or index.max() >= table.numel():
            raise ValidationError(
                f"Domain index outside [0, {table.numel()})", domain_count=int(table.numel())
            )
        w = table[index]

    factor = w.pow(2) if reduction == "residual" else w

    def per_sample(r: torch.Tensor) -> torch.Tensor:
        return r.pow(2).reshape(batch, -1).mean(dim=1)

    return (factor * per_sample(forward_residual)).mean() + (factor * per_sample(backward_residual)).mean()


def generator_objective(adv_g: torch.Tensor, cyc: torch.Tensor, wls: torch.Tensor,
                        lambda_cyc: float = 10.0, lambda_wls: float = 10.0) -> torch.Tensor:
    """adv_g + lambda_cyc * cyc + lambda_wls * wls"""
    return adv_g + lambda_cyc * cyc + lambda_wls * wls


def ensure_finite(value: float, term: str, epoch: Optional[int] = None, batch: Optional[int] = None) -> float:
    """Raise NumericalError naming the loss term when ``value`` is NaN or infinite"""
    value = float(value)
    if not math.isfinite(value):
        raise NumericalError(
            f"Loss term '{term}' is {value} at epoch {epoch}, batch {batch}",
            term=term, epoch=epoch, batch=batch,
        )
    return value
