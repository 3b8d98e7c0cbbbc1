"""
Agreement statistics: Bland-Altman, correlation, paired tests, weighted
kappa, reading accuracy and region ratios
"""
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats
from sklearn.metrics import confusion_matrix

from ..data.volume import Volume
from ..utils.errors import UndefinedMetricError, ValidationError

LOA_Z = 1.96
KAPPA_WEIGHTS = (None, "linear", "quadratic")


def _series(a, b, minimum: int = 2) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValidationError(f"Series lengths differ: {a.size} and {b.size}", left=a.size, right=b.size)
    if a.size < minimum:
        raise ValidationError(f"Need at least {minimum} paired values, got {a.size}", count=a.size)
    return a, b


@dataclass
class BlandAltmanResult:
    mean_difference: float
    sd_difference: float
    lower_limit: float
    upper_limit: float
    n: int
    mean_ci: Tuple[float, float] = (0.0, 0.0)
    lower_limit_ci: Tuple[float, float] = (0.0, 0.0)
    upper_limit_ci: Tuple[float, float] = (0.0, 0.0)
    means: List[float] = field(default_factory=list)
    differences: List[float] = field(default_factory=list)

    def summary(self) -> Dict[str, Any]:
        data = asdict(self)
        data.pop("means")
        data.pop("differences")
        return data


def bland_altman(a, b, confidence: float = 0.95) -> BlandAltmanResult:
    """
    Mean difference d = a - b and limits of agreement mean(d) +/- 1.96 sd(d)

    sd uses the sample (n - 1) estimator. Confidence intervals use the
    t distribution with n - 1 degrees of freedom; the standard error of each
    limit is sqrt(3 sd^2 / n).
    """
    a, b = _series(a, b)
    d = a - b
    n = d.size
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    lower, upper = mean - LOA_Z * sd, mean + LOA_Z * sd

    t = float(stats.t.ppf(0.5 + confidence / 2, df=n - 1))
    se_mean = sd / np.sqrt(n)
    se_limit = np.sqrt(3 * sd ** 2 / n)

    return BlandAltmanResult(
        mean_difference=mean,
        sd_difference=sd,
        lower_limit=lower,
        upper_limit=upper,
        n=n,
        mean_ci=(mean - t * se_mean, mean + t * se_mean),
        lower_limit_ci=(lower - t * se_limit, lower + t * se_limit),
        upper_limit_ci=(upper - t * se_limit, upper + t * se_limit),
        means=((a + b) / 2).tolist(),
        differences=d.tolist(),
    )


@dataclass
class CorrelationResult:
    r: float
    p_value: float
    n: int


def correlation(a, b) -> CorrelationResult:
    """Sample Pearson correlation with its two-sided p-value"""
    a, b = _series(a, b)
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise UndefinedMetricError("Pearson correlation is undefined for a constant series")
    r, p = stats.pearsonr(a, b)
    return CorrelationResult(r=float(np.clip(r, -1.0, 1.0)), p_value=float(p), n=int(a.size))


def pearson_r(a, b) -> float:
    return correlation(a, b).r


@dataclass
class PairedTestResult:
    statistic: float
    p_value: float
    n: int


def paired_difference_test(a, b) -> PairedTestResult:
    """Paired t-test of a against b"""
    a, b = _series(a, b)
    result = stats.ttest_rel(a, b)
    return PairedTestResult(statistic=float(result.statistic), p_value=float(result.pvalue), n=int(a.size))


def _kappa_weights(k: int, weights: Optional[str]) -> np.ndarray:
    i, j = np.meshgrid(np.arange(k), np.arange(k), indexing='ij')
    if weights is None:
        return (i != j).astype(np.float64)
    distance = np.abs(i - j) / (k - 1)
    return distance if weights == "linear" else distance ** 2


def kappa_from_table(table, weights: Optional[str] = None) -> float:
    """
    Weighted kappa from a k x k confusion table (rows: rater a, columns: rater b)

        kappa = 1 - sum(W * O) / sum(W * E)

    which for two categories equals (p_o - p_e) / (1 - p_e) under every
    weighting. When chance agreement is total (sum(W * E) = 0) the statistic
    is 1 for perfect agreement and undefined otherwise.
    """
    if weights not in KAPPA_WEIGHTS:
        raise ValidationError(f"Unknown kappa weighting '{weights}'", weights=str(weights))
    table = np.asarray(table, dtype=np.float64)
    if table.ndim != 2 or table.shape[0] != table.shape[1]:
        raise ValidationError(f"Confusion table must be square, got shape {table.shape}", shape=table.shape)
    total = table.sum()
    if total <= 0:
        raise ValidationError("Confusion table is empty")

    k = table.shape[0]
    observed = table / total
    if k == 1:
        return 1.0
    expected = np.outer(observed.sum(axis=1), observed.sum(axis=0))
    w = _kappa_weights(k, weights)

    disagreement_expected = float((w * expected).sum())
    disagreement_observed = float((w * observed).sum())
    if disagreement_expected == 0:
        if disagreement_observed == 0:
            return 1.0
        raise UndefinedMetricError("Kappa is undefined when chance agreement is total")
    return 1.0 - disagreement_observed / disagreement_expected


def weighted_kappa(ratings_a: Sequence, ratings_b: Sequence, weights: Optional[str] = None) -> float:
    """Cohen's (weighted) kappa between two raters' categorical reads"""
    a = np.asarray(ratings_a).ravel()
    b = np.asarray(ratings_b).ravel()
    if a.size != b.size:
        raise ValidationError(f"Rating series lengths differ: {a.size} and {b.size}", left=a.size, right=b.size)
    if a.size < 1:
        raise ValidationError("Need at least one pair of ratings")
    labels = np.unique(np.concatenate([a, b]))
    return kappa_from_table(confusion_matrix(a, b, labels=labels), weights)


def reading_accuracy(predicted: Sequence, truth: Sequence) -> float:
    """Fraction of reads matching the ground-truth reads"""
    p = np.asarray(predicted).ravel()
    t = np.asarray(truth).ravel()
    if p.size != t.size:
        raise ValidationError(f"Read series lengths differ: {p.size} and {t.size}", left=p.size, right=t.size)
    if p.size == 0:
        raise ValidationError("Need at least one read")
    return float(np.mean(p == t))


def region_ratio(volume: Union[Volume, np.ndarray], target_mask: np.ndarray, reference_mask: np.ndarray) -> float:
    """Mean intensity over the target mask divided by mean over the reference mask"""
    voxels = volume.voxels if isinstance(volume, Volume) else np.asarray(volume)
    voxels = voxels.astype(np.float64)
    for name, mask in (("target", target_mask), ("reference", reference_mask)):
        mask = np.asarray(mask)
        if mask.shape != voxels.shape:
            raise ValidationError(
                f"{name} mask shape {mask.shape} does not match volume {voxels.shape}", mask=name
            )
        if not mask.astype(bool).any():
            raise ValidationError(f"{name} mask is empty", mask=name)

    reference_mean = float(voxels[np.asarray(reference_mask, dtype=bool)].mean())
    if reference_mean <= 0:
        raise ValidationError(f"Reference region mean is {reference_mean}; must be > 0", reference_mean=reference_mean)
    return float(voxels[np.asarray(target_mask, dtype=bool)].mean()) / reference_mean
