"""
Synthetic acquisition domains: count-thinning short scans from clean volumes
"""
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from ..models.conditioning import MappingLabel
from ..utils.config import DomainConfig
from ..utils.errors import ValidationError
from .preprocessing import gaussian_smooth
from .volume import Volume

SeedLike = Union[int, Sequence[int]]

# count_scale, time_fraction, psf_fwhm_mm
DEFAULT_DOMAIN_PARAMETERS = [
    ("domain_a", 2.0, 0.1, 4.0),
    ("domain_b", 0.8, 0.1, 6.0),
    ("domain_c", 0.3, 0.1, 8.0),
    ("domain_d", 1.2, 0.05, 5.0),
    ("domain_e", 0.5, 0.2, 7.0),
]


@dataclass(frozen=True)
class DomainSpec:
    """One acquisition domain and its degradation parameters"""
    index: int
    name: str
    domain_count: int
    count_scale: float = 1.0
    time_fraction: float = 0.1
    psf_fwhm_mm: float = 0.0
    held_out: bool = False

    def __post_init__(self):
        if self.count_scale <= 0:
            raise ValidationError(f"Domain '{self.name}' count_scale must be > 0", domain=self.name)
        if not 0 < self.time_fraction <= 1:
            raise ValidationError(f"Domain '{self.name}' time_fraction must be in (0, 1]", domain=self.name)
        if self.psf_fwhm_mm < 0:
            raise ValidationError(f"Domain '{self.name}' psf_fwhm_mm must be >= 0", domain=self.name)
        if not self.held_out and not 0 <= self.index < self.domain_count:
            raise ValidationError(
                f"Domain index {self.index} outside [0, {self.domain_count})", domain=self.name, index=self.index
            )

    @property
    def one_hot_label(self) -> Optional[MappingLabel]:
        """Training label; held-out domains have none"""
        if self.held_out:
            return None
        return MappingLabel.one_hot(self.index, self.domain_count)

    @property
    def expected_counts_per_unit(self) -> float:
        return self.count_scale * self.time_fraction

    def to_dict(self) -> dict:
        label = self.one_hot_label
        return {
            "index": self.index,
            "name": self.name,
            "label": label.to_list() if label is not None else None,
            "count_scale": self.count_scale,
            "time_fraction": self.time_fraction,
            "psf_fwhm_mm": self.psf_fwhm_mm,
            "held_out": self.held_out,
        }

    @classmethod
    def from_dict(cls, data: dict, domain_count: int) -> "DomainSpec":
        return cls(
            index=int(data["index"]),
            name=data["name"],
            domain_count=domain_count,
            count_scale=float(data["count_scale"]),
            time_fraction=float(data["time_fraction"]),
            psf_fwhm_mm=float(data["psf_fwhm_mm"]),
            held_out=bool(data.get("held_out", False)),
        )


def default_domains(count: int) -> List[DomainSpec]:
    """Distinct synthetic domains with decreasing count levels and widening PSFs"""
    if not 1 <= count <= len(DEFAULT_DOMAIN_PARAMETERS):
        raise ValidationError(
            f"Default domains exist for 1..{len(DEFAULT_DOMAIN_PARAMETERS)} domains, got {count}", count=count
        )
    return [
        DomainSpec(index=i, name=name, domain_count=count, count_scale=s, time_fraction=t, psf_fwhm_mm=fwhm)
        for i, (name, s, t, fwhm) in enumerate(DEFAULT_DOMAIN_PARAMETERS[:count])
    ]


def domains_from_config(configs: Sequence[DomainConfig], count: int) -> List[DomainSpec]:
    """DomainSpecs from experiment configuration; falls back to the defaults"""
    if not configs:
        return default_domains(count)
    return [
        DomainSpec(index=i, name=c.name, domain_count=len(configs), count_scale=c.count_scale,
                   time_fraction=c.time_fraction, psf_fwhm_mm=c.psf_fwhm_mm)
        for i, c in enumerate(configs)
    ]


def mixture_domain(a: DomainSpec, b: DomainSpec, alpha: float, name: Optional[str] = None,
                   index: Optional[int] = None) -> DomainSpec:
    """
    Held-out domain whose degradation parameters interpolate between two
    training domains: p = (1 - alpha) * p_a + alpha * p_b
    """
    if not 0 <= alpha <= 1:
        raise ValidationError(f"Mixture weight must be in [0, 1], got {alpha}", alpha=alpha)

    def mix(p: float, q: float) -> float:
        return (1 - alpha) * p + alpha * q

    return replace(
        a,
        index=a.domain_count if index is None else index,
        name=name or f"mix_{a.name}_{b.name}_{alpha:g}",
        count_scale=mix(a.count_scale, b.count_scale),
        time_fraction=mix(a.time_fraction, b.time_fraction),
        psf_fwhm_mm=mix(a.psf_fwhm_mm, b.psf_fwhm_mm),
        held_out=True,
    )


def synthesize_domain(clean: Volume, spec: DomainSpec, seed: SeedLike) -> Tuple[Volume, Volume]:
    """
    Simulate a (short, standard) scan pair for one domain

    standard = clean blurred by the domain PSF
    short    = Poisson(t * s * standard) / (t * s)

    so E[short] = standard and Var[short] = standard / (t * s).

    Returns:
        (short volume, standard volume)
    """
    if np.any(clean.voxels < 0):
        raise ValidationError("Clean volume has negative voxels", domain=spec.name)

    standard = gaussian_smooth(clean, spec.psf_fwhm_mm)
    expected = np.clip(standard.voxels.astype(np.float64), 0.0, None)

    rate = spec.expected_counts_per_unit
    rng = np.random.default_rng(seed)
    short = rng.poisson(expected * rate) / rate

    tags = {"domain": spec.name, "domain_index": spec.index}
    duration = clean.scan_duration_min
    standard_volume = Volume(
        voxels=expected.astype(np.float32), spacing=clean.spacing, intensity_units=clean.intensity_units,
        scan_duration_min=duration, metadata={**clean.metadata, **tags, "scan": "standard"},
    )
    short_volume = Volume(
        voxels=short.astype(np.float32), spacing=clean.spacing, intensity_units=clean.intensity_units,
        scan_duration_min=duration * spec.time_fraction if duration is not None else None,
        metadata={**clean.metadata, **tags, "scan": "short"},
    )
    return short_volume, standard_volume
