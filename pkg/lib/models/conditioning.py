"""
Mapping labels, mapping networks and adaptive instance normalization.

A mapping network turns the length-N mapping label c into per-channel
target statistics (mu, sigma) for one AdaIN site; :func:`adain` then
re-normalises a feature map to those statistics.
"""
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn as nn

from ..utils.errors import ConfigurationError, DimensionError, ValidationError


@dataclass(frozen=True)
class MappingLabel:
    """Length-N conditioning vector c"""
    values: tuple

    @classmethod
    def one_hot(cls, index: int, domain_count: int) -> "MappingLabel":
        if not 0 <= index < domain_count:
            raise ValidationError(
                f"Domain index {index} outside [0, {domain_count})", index=index, domain_count=domain_count
            )
        values = [0.0] * domain_count
        values[index] = 1.0
        return cls(tuple(values))

    @classmethod
    def of(cls, values: Union["MappingLabel", Iterable[float], np.ndarray, torch.Tensor]) -> "MappingLabel":
        if isinstance(values, MappingLabel):
            return values
        if isinstance(values, torch.Tensor):
            values = values.detach().cpu().reshape(-1).tolist()
        return cls(tuple(float(v) for v in np.asarray(values, dtype=np.float64).reshape(-1)))

    def __len__(self) -> int:
        return len(self.values)

    def validate(self, domain_count: int) -> "MappingLabel":
        if len(self.values) != domain_count:
            raise ConfigurationError(
                f"Mapping label has length {len(self.values)}, model expects {domain_count}",
                label_length=len(self.values), domain_count=domain_count,
            )
        return self

    def is_one_hot(self) -> bool:
        return sorted(self.values) == [0.0] * (len(self.values) - 1) + [1.0]

    def to_tensor(self, dtype: torch.dtype = torch.float32, device: Optional[torch.device] = None) -> torch.Tensor:
        return torch.tensor(self.values, dtype=dtype, device=device)

    def to_list(self) -> list:
        return list(self.values)


@dataclass
class AdaINStats:
    """Target per-channel means and scales for one AdaIN site"""
    mu: torch.Tensor
    sigma: torch.Tensor

    @property
    def channels(self) -> int:
        return self.mu.shape[-1]


class MappingNetwork(nn.Module):
    """Two 64-node hidden layers, output layer of 2*J nodes split into (mu, sigma)"""

    def __init__(self, domain_count: int, channels: int, hidden: int = 64, negative_slope: float = 0.2):
        super().__init__()
        self.domain_count = domain_count
        self.channels = channels
        self.layers = nn.Sequential(
            nn.Linear(domain_count, hidden),
            nn.LeakyReLU(negative_slope),
            nn.Linear(hidden, hidden),
            nn.LeakyReLU(negative_slope),
            nn.Linear(hidden, 2 * channels),
        )

    @property
    def output_layer(self) -> nn.Linear:
        return self.layers[-1]

    def forward(self, c: torch.Tensor) -> AdaINStats:
        if c.shape[-1] != self.domain_count:
            raise ConfigurationError(
                f"Mapping label has length {c.shape[-1]}, network expects {self.domain_count}",
                label_length=int(c.shape[-1]), domain_count=self.domain_count,
            )
        out = self.layers(c)
        mu, sigma = out.split(self.channels, dim=-1)
        return AdaINStats(mu=mu, sigma=sigma)


def map_label(net: MappingNetwork, c: Union[MappingLabel, Sequence[float], torch.Tensor]) -> AdaINStats:
    """Evaluate one mapping network on a label (or a batch of labels)"""
    if not isinstance(c, torch.Tensor):
        param = next(net.parameters())
        c = MappingLabel.of(c).to_tensor(dtype=param.dtype, device=param.device)
    return net(c)


def adain(h: torch.Tensor, stats: AdaINStats, eps: float = 1e-5) -> torch.Tensor:
    """
    Adaptive instance normalization.

    output_j = sigma_j * (h_j - mean(h_j)) / sqrt(var(h_j) + eps) + mu_j

    Statistics are population statistics over the spatial axes of each
    channel. ``h`` is (C, H, W) or (B, C, H, W); ``stats`` carries (C,) or
    (B, C) vectors.
    """
    if h.dim() not in (3, 4):
        raise DimensionError("AdaIN expects a (C, H, W) or (B, C, H, W) feature map", shape=tuple(h.shape))
    channels = h.shape[-3]
    if stats.mu.shape[-1] != channels or stats.sigma.shape[-1] != channels:
        raise DimensionError(
            f"AdaIN statistics have {stats.mu.shape[-1]} channels, feature map has {channels}",
            stats_channels=int(stats.mu.shape[-1]), feature_channels=int(channels),
        )

    mean = h.mean(dim=(-2, -1), keepdim=True)
    var = h.var(dim=(-2, -1), keepdim=True, unbiased=False)
    normalized = (h - mean) / torch.sqrt(var + eps)

    mu = stats.mu[..., None, None]
    sigma = stats.sigma[..., None, None]
    return sigma * normalized + mu


class NormSite(nn.Module):
    """
    One normalization site of a generator.

    Conditioned sites own a mapping network fed by the label; unconditioned
    sites (ablation modes without labels) hold learned per-channel affine
    statistics instead, i.e. instance normalization with learned parameters.
    """

    def __init__(self, channels: int, domain_count: int, conditioned: bool = True,
                 hidden: int = 64, negative_slope: float = 0.2, eps: float = 1e-5):
        super().__init__()
        self.channels = channels
        self.conditioned = conditioned
        self.eps = eps
        if conditioned:
            self.mapping = MappingNetwork(domain_count, channels, hidden, negative_slope)
        else:
            self.mu = nn.Parameter(torch.zeros(channels))
            self.sigma = nn.Parameter(torch.ones(channels))

    def statistics(self, c: Optional[torch.Tensor]) -> AdaINStats:
        if self.conditioned:
            if c is None:
                raise ConfigurationError("Conditioned normalization site needs a mapping label")
            return self.mapping(c)
        return AdaINStats(mu=self.mu, sigma=self.sigma)

    def forward(self, h: torch.Tensor, c: Optional[torch.Tensor] = None) -> torch.Tensor:
        return adain(h, self.statistics(c), self.eps)
