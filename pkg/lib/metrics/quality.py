"""
Image-quality metrics: NRMSE and global-statistics SSIM, per volume and per slice
"""
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from ..utils.config import SSIM_ALPHA1, SSIM_ALPHA2
from ..utils.errors import DimensionError, UndefinedMetricError


def _pair(z, x):
    z = np.asarray(z, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if z.shape != x.shape:
        raise DimensionError(f"Metric inputs have shapes {z.shape} and {x.shape}", z_shape=z.shape, x_shape=x.shape)
    return z, x


def nrmse(z, x) -> float:
    """100 * ||z - x||_2 / ||x||_2, in percent"""
    z, x = _pair(z, x)
    reference = np.linalg.norm(x.ravel())
    if reference == 0:
        raise UndefinedMetricError("NRMSE is undefined for a zero reference image")
    return float(100.0 * np.linalg.norm((z - x).ravel()) / reference)


def ssim(z, x, alpha1: float = SSIM_ALPHA1, alpha2: float = SSIM_ALPHA2) -> float:
    """
    Structural similarity from global image statistics

        (2 mu_z mu_x + a1)(2 s_zx + a2) / ((mu_z^2 + mu_x^2 + a1)(s_z^2 + s_x^2 + a2))

    Population statistics over every element. Symmetric in (z, x).
    """
    z, x = _pair(z, x)
    mu_z, mu_x = z.mean(), x.mean()
    dz, dx = z - mu_z, x - mu_x
    var_z = np.mean(dz * dz)
    var_x = np.mean(dx * dx)
    cov = np.mean(dz * dx)

    numerator = (2 * mu_z * mu_x + alpha1) * (2 * cov + alpha2)
    denominator = (mu_z * mu_z + mu_x * mu_x + alpha1) * (var_z + var_x + alpha2)
    if denominator == 0:
        raise UndefinedMetricError("SSIM is undefined for all-zero images with zero constants")
    return float(numerator / denominator)


def ssim_per_slice(z, x, alpha1: float = SSIM_ALPHA1, alpha2: float = SSIM_ALPHA2) -> List[float]:
    z, x = _pair(z, x)
    return [ssim(z[k], x[k], alpha1, alpha2) for k in range(z.shape[0])]


def nrmse_per_slice(z, x) -> List[float]:
    """Per-slice NRMSE; slices with a zero reference come back as NaN"""
    z, x = _pair(z, x)
    values = []
    for k in range(z.shape[0]):
        try:
            values.append(nrmse(z[k], x[k]))
        except UndefinedMetricError:
            values.append(float("nan"))
    return values


@dataclass
class VolumeMetrics:
    """Metrics of one corrected volume against its standard-scan reference"""
    subject_id: str
    domain: str
    nrmse: float
    ssim: float
    ssim_slice_mean: float
    baseline_nrmse: Optional[float] = None
    baseline_ssim: Optional[float] = None
    ratio_corrected: Optional[float] = None
    ratio_reference: Optional[float] = None
    ratio_short: Optional[float] = None
    nrmse_slices: Optional[List[float]] = None
    ssim_slices: Optional[List[float]] = None

    def row(self) -> Dict[str, Any]:
        data = asdict(self)
        data.pop("nrmse_slices")
        data.pop("ssim_slices")
        return data


def evaluate_volume(
    corrected,
    reference,
    subject_id: str = "",
    domain: str = "",
    baseline=None,
    alpha1: float = SSIM_ALPHA1,
    alpha2: float = SSIM_ALPHA2,
    per_slice: bool = False,
) -> VolumeMetrics:
    """
    NRMSE and SSIM of a corrected volume (all slices pooled)

    Args:
        corrected: corrected voxels
        reference: standard-scan voxels
        baseline: uncorrected short-scan voxels, reported alongside when given
        per_slice: also keep per-slice series
    """
    slice_ssim = ssim_per_slice(corrected, reference, alpha1, alpha2)
    metrics = VolumeMetrics(
        subject_id=subject_id,
        domain=domain,
        nrmse=nrmse(corrected, reference),
        ssim=ssim(corrected, reference, alpha1, alpha2),
        ssim_slice_mean=float(np.mean(slice_ssim)),
    )
    if baseline is not None:
        metrics.baseline_nrmse = nrmse(baseline, reference)
        metrics.baseline_ssim = ssim(baseline, reference, alpha1, alpha2)
    if per_slice:
        metrics.nrmse_slices = nrmse_per_slice(corrected, reference)
        metrics.ssim_slices = slice_ssim
    return metrics


@dataclass
class MetricReport:
    """Per-volume metrics plus aggregate summaries"""
    volumes: List[VolumeMetrics] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def add(self, metrics: VolumeMetrics) -> None:
        self.volumes.append(metrics)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame([v.row() for v in self.volumes])

    def slice_frame(self) -> pd.DataFrame:
        rows = []
        for v in self.volumes:
            for k, (n, s) in enumerate(zip(v.nrmse_slices or [], v.ssim_slices or [])):
                rows.append({"subject_id": v.subject_id, "domain": v.domain, "slice": k, "nrmse": n, "ssim": s})
        return pd.DataFrame(rows, columns=["subject_id", "domain", "slice", "nrmse", "ssim"])

    def aggregate(self) -> Dict[str, Any]:
        """Mean and sample standard deviation per domain and overall"""
        frame = self.frame()
        if frame.empty:
            return {"volumes": 0}

        columns = [c for c in ("nrmse", "ssim", "ssim_slice_mean", "baseline_nrmse", "baseline_ssim")
                   if c in frame and frame[c].notna().any()]

        def summarize(group: pd.DataFrame) -> Dict[str, Any]:
            out: Dict[str, Any] = {"volumes": int(len(group))}
            for c in columns:
                out[f"{c}_mean"] = float(group[c].mean())
                out[f"{c}_sd"] = float(group[c].std(ddof=1)) if len(group) > 1 else 0.0
            return out

        return {
            **summarize(frame),
            "domains": {str(name): summarize(group) for name, group in frame.groupby("domain", sort=True)},
            **self.metadata,
        }
