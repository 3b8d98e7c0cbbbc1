"""
Conditional framelet generators and patch discriminators
"""
from typing import List, Optional, Tuple, Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..utils.config import DiscriminatorConfig, GeneratorConfig
from ..utils.errors import ConfigurationError, DimensionError
from .conditioning import MappingLabel, NormSite
from .wavelet import SubbandSet, haar_decompose, haar_reconstruct


class ConvBlock(nn.Module):
    """4x4 convolution (same padding, stride 1) -> normalization site -> leaky ReLU"""

    def __init__(self, in_channels: int, out_channels: int, config: GeneratorConfig):
        super().__init__()
        # Even kernel: pad one pixel before and two after to keep H x W
        self.pad = nn.ZeroPad2d((1, 2, 1, 2))
        # No bias: the normalization site removes the per-channel mean anyway
        self.conv = nn.Conv2d(in_channels, out_channels, kernel_size=4, stride=1, padding=0, bias=False)
        self.norm = NormSite(
            out_channels,
            config.domain_count,
            conditioned=config.conditioned,
            hidden=config.mapping_hidden,
            negative_slope=config.negative_slope,
            eps=config.adain_eps,
        )
        self.act = nn.LeakyReLU(config.negative_slope)

    def forward(self, h: torch.Tensor, c: Optional[torch.Tensor]) -> torch.Tensor:
        return self.act(self.norm(self.conv(self.pad(h)), c))


class DoubleBlock(nn.Module):
    """Two repeated conditioned convolution blocks"""

    def __init__(self, in_channels: int, out_channels: int, config: GeneratorConfig):
        super().__init__()
        self.first = ConvBlock(in_channels, out_channels, config)
        self.second = ConvBlock(out_channels, out_channels, config)

    def forward(self, h: torch.Tensor, c: Optional[torch.Tensor]) -> torch.Tensor:
        return self.second(self.first(h, c), c)


class FrameletGenerator(nn.Module):
    """
    Encoder-decoder whose resolution changes are Haar transforms.

    Encoder stage k runs two conditioned blocks, then decomposes: the three
    high-pass subbands skip straight to decoder stage k and the low-pass
    subband descends. Decoder stage k reconstructs from (processed low-pass,
    skipped high-pass), concatenates the result with the same-stage encoder
    features and runs two conditioned blocks. A final 1x1 convolution maps
    back to the output channel count.
    """

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        channels = list(config.channels)

        self.encoders = nn.ModuleList()
        in_ch = config.in_channels
        for ch in channels:
            self.encoders.append(DoubleBlock(in_ch, ch, config))
            in_ch = ch

        self.bottleneck = DoubleBlock(channels[-1], channels[-1], config)

        # decoders[k] consumes J_k channels and emits J_{k-1} (J_1 at the top)
        self.decoders = nn.ModuleList()
        for k, ch in enumerate(channels):
            out_ch = channels[k - 1] if k > 0 else channels[0]
            self.decoders.append(DoubleBlock(2 * ch, out_ch, config))

        self.head = nn.Conv2d(channels[0], config.out_channels, kernel_size=1)

    @property
    def domain_count(self) -> int:
        return self.config.domain_count

    def norm_sites(self) -> List[NormSite]:
        return [m for m in self.modules() if isinstance(m, NormSite)]

    def _prepare_label(self, c, z: torch.Tensor) -> Optional[torch.Tensor]:
        if c is None:
            if self.config.conditioned:
                raise ConfigurationError("Conditioned generator needs a mapping label")
            return None
        if not isinstance(c, torch.Tensor):
            c = MappingLabel.of(c).to_tensor()
        c = c.to(dtype=z.dtype, device=z.device)
        if c.shape[-1] != self.config.domain_count:
            raise ConfigurationError(
                f"Mapping label has length {c.shape[-1]}, model expects {self.config.domain_count}",
                label_length=int(c.shape[-1]), domain_count=self.config.domain_count,
            )
        if c.dim() == 2 and c.shape[0] != z.shape[0]:
            raise DimensionError(
                f"Got {c.shape[0]} labels for a batch of {z.shape[0]}", labels=int(c.shape[0]), batch=int(z.shape[0])
            )
        return c

    def forward(self, z: torch.Tensor, c: Union[torch.Tensor, MappingLabel, None] = None) -> torch.Tensor:
        """
        Args:
            z: (B, C_in, H, W) or (C_in, H, W) image
            c: (N,) label shared by the batch, or (B, N) per-sample labels

        Returns:
            Corrected image with the input's shape
        """
        squeeze = z.dim() == 3
        if squeeze:
            z = z.unsqueeze(0)
        if z.dim() != 4:
            raise DimensionError("Generator expects a (B, C, H, W) or (C, H, W) input", shape=tuple(z.shape))

        height, width = z.shape[-2:]
        divisor = self.config.divisor
        if height % divisor or width % divisor:
            raise DimensionError(
                f"Input {height}x{width} is not divisible by 2^{self.config.stages} = {divisor}",
                height=int(height), width=int(width), divisor=divisor,
            )
        c = self._prepare_label(c, z)

        features: List[torch.Tensor] = []
        highs: List[Tuple[torch.Tensor, torch.Tensor, torch.Tensor]] = []
        h = z
        for encoder in self.encoders:
            h = encoder(h, c)
            features.append(h)
            bands = haar_decompose(h)
            highs.append(bands.high())
            h = bands.ll

        h = self.bottleneck(h, c)

        for k in reversed(range(len(self.decoders))):
            lh, hl, hh = highs[k]
            up = haar_reconstruct(SubbandSet(h, lh, hl, hh))
            h = self.decoders[k](torch.cat([up, features[k]], dim=1), c)

        out = self.head(h)
        return out.squeeze(0) if squeeze else out


class PatchDiscriminator(nn.Module):
    """
    Unconditional patch discriminator: stride-2 4x4 convolutions with batch
    normalization and leaky ReLU, closed by a 1x1 convolution to one channel.
    Output spatial size is ceil(H / 2^layers) x ceil(W / 2^layers).
    """

    def __init__(self, config: DiscriminatorConfig, in_channels: int = 1):
        super().__init__()
        self.config = config
        layers = []
        in_ch = in_channels
        for i in range(config.layers):
            out_ch = config.base_channels * (2 ** i)
            layers.append(nn.Conv2d(in_ch, out_ch, kernel_size=4, stride=2, padding=0, bias=False))
            layers.append(nn.BatchNorm2d(out_ch))
            layers.append(nn.LeakyReLU(config.negative_slope))
            in_ch = out_ch
        self.stages = nn.ModuleList(layers)
        self.head = nn.Conv2d(in_ch, 1, kernel_size=1)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        squeeze = image.dim() == 3
        if squeeze:
            image = image.unsqueeze(0)
        height, width = image.shape[-2:]
        min_size = self.config.min_size
        if height < min_size or width < min_size:
            raise DimensionError(
                f"Discriminator input {height}x{width} is smaller than {min_size}x{min_size}",
                height=int(height), width=int(width), min_size=min_size,
            )

        h = image
        for layer in self.stages:
            if isinstance(layer, nn.Conv2d):
                # pad 1 on each side plus one extra on odd axes -> ceil(size / 2)
                h = F.pad(h, (1, 1 + h.shape[-1] % 2, 1, 1 + h.shape[-2] % 2))
            h = layer(h)
        out = self.head(h)
        return out.squeeze(0) if squeeze else out


class PassThroughGenerator(nn.Module):
    """
    Debug generator: a single 1x1 convolution initialized to the identity,
    no normalization sites. Labels are accepted and ignored.
    """

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        self.head = nn.Conv2d(config.in_channels, config.out_channels, kernel_size=1)
        with torch.no_grad():
            self.head.weight.zero_()
            for ch in range(min(config.in_channels, config.out_channels)):
                self.head.weight[ch, ch, 0, 0] = 1.0
            self.head.bias.zero_()

    def forward(self, z: torch.Tensor, c=None) -> torch.Tensor:
        squeeze = z.dim() == 3
        out = self.head(z.unsqueeze(0) if squeeze else z)
        return out.squeeze(0) if squeeze else out


def init_weights(module: nn.Module, std: float = 0.01) -> nn.Module:
    """Gaussian N(0, std) weights, zero biases; normalization layers keep unit scale"""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.normal_(m.weight, mean=0.0, std=std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
    for m in module.modules():
        if isinstance(m, NormSite) and m.conditioned:
            # sigma half of the output layer starts at one so sites pass features through
            with torch.no_grad():
                m.mapping.output_layer.bias[m.channels:].fill_(1.0)
    return module


def build_generator(config: GeneratorConfig, init_std: float = 0.01) -> FrameletGenerator:
    return init_weights(FrameletGenerator(config), init_std)


def build_discriminator(config: DiscriminatorConfig, init_std: float = 0.01, in_channels: int = 1) -> PatchDiscriminator:
    return init_weights(PatchDiscriminator(config, in_channels), init_std)


def generator_forward(params: FrameletGenerator, z: torch.Tensor, c) -> torch.Tensor:
    """Functional entry point: run a generator on one image or a batch"""
    return params(z, c)


def discriminator_forward(params: PatchDiscriminator, image: torch.Tensor) -> torch.Tensor:
    """Functional entry point: patch-level real/fake score map"""
    return params(image)


def count_parameters(module: nn.Module, name_filter: Optional[str] = None) -> int:
    return sum(
        p.numel() for name, p in module.named_parameters()
        if name_filter is None or name_filter in name
    )
