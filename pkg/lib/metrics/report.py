"""
Metric report files: per-volume CSVs, summary JSON, agreement plots and
the ablation summary table
"""
import json
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from ..utils.errors import IngestionError, ValidationError  # noqa: E402
from ..utils.logging_config import get_logger  # noqa: E402
from .agreement import BlandAltmanResult, bland_altman, correlation, paired_difference_test  # noqa: E402
from .quality import MetricReport  # noqa: E402

logger = get_logger(__name__)

METRICS_CSV = "metrics.csv"
SLICES_CSV = "slices.csv"
SUMMARY_JSON = "summary.json"
BASELINE_ROW = "short scan"


def write_metric_report(report: MetricReport, out_dir: Union[str, Path],
                        extra: Optional[Dict[str, Any]] = None) -> Dict[str, Path]:
    """
    Write metrics.csv, summary.json and (when per-slice series exist) slices.csv

    Returns:
        Mapping of file kind to written path
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"metrics": out_dir / METRICS_CSV, "summary": out_dir / SUMMARY_JSON}

    report.frame().to_csv(paths["metrics"], index=False)
    slices = report.slice_frame()
    if not slices.empty:
        paths["slices"] = out_dir / SLICES_CSV
        slices.to_csv(paths["slices"], index=False)

    summary = {**report.aggregate(), **(extra or {})}
    with open(paths["summary"], 'w') as f:
        json.dump(summary, f, indent=2, default=str)

    logger.info("metric_report_written", path=str(out_dir), volumes=len(report.volumes))
    return paths


def load_metric_frame(path: Union[str, Path]) -> pd.DataFrame:
    """Read metrics.csv from a report directory or a CSV path"""
    path = Path(path)
    if path.is_dir():
        path = path / METRICS_CSV
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError:
        raise IngestionError(f"Metric file not found: {path}", path=str(path))
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise IngestionError(f"Malformed metric file {path}: {e}", path=str(path))
    for column in ("subject_id", "domain", "nrmse", "ssim"):
        if column not in frame:
            raise IngestionError(f"Metric file {path} has no '{column}' column", path=str(path))
    return frame


def bland_altman_frame(result: BlandAltmanResult) -> pd.DataFrame:
    return pd.DataFrame({"mean": result.means, "difference": result.differences})


def plot_bland_altman(result: BlandAltmanResult, path: Union[str, Path], title: str = "",
                      xlabel: str = "Mean of corrected and reference",
                      ylabel: str = "Difference (corrected - reference)") -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(7, 5))
    ax.scatter(result.means, result.differences, alpha=0.6)
    ax.axhline(result.mean_difference, color='blue', linestyle='--', label=f'Mean diff: {result.mean_difference:.4f}')
    ax.axhline(result.upper_limit, color='red', linestyle='--', label=f'+1.96 SD: {result.upper_limit:.4f}')
    ax.axhline(result.lower_limit, color='red', linestyle='--', label=f'-1.96 SD: {result.lower_limit:.4f}')
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_correlation(a, b, r: float, path: Union[str, Path], title: str = "",
                     xlabel: str = "Reference", ylabel: str = "Corrected") -> Path:
    path = Path(path)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(a, b, alpha=0.6)
    lo, hi = float(min(a.min(), b.min())), float(max(a.max(), b.max()))
    ax.plot([lo, hi], [lo, hi], color='grey', linestyle=':')
    ax.annotate(f"r = {r:.3f}", xy=(0.05, 0.92), xycoords='axes fraction')
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def write_agreement(
    corrected,
    reference,
    out_dir: Union[str, Path],
    name: str = "ratio",
    plots: bool = True,
) -> Dict[str, Any]:
    """
    Bland-Altman, correlation and paired-test outputs for two paired series

    Writes ``<name>_bland_altman.csv``, ``<name>_correlation.csv`` and the
    matching PNGs; returns the summary statistics.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corrected = np.asarray(corrected, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)

    ba = bland_altman(corrected, reference)
    corr = correlation(corrected, reference)
    test = paired_difference_test(corrected, reference)

    bland_altman_frame(ba).to_csv(out_dir / f"{name}_bland_altman.csv", index=False)
    pd.DataFrame({"reference": reference, "corrected": corrected}).to_csv(
        out_dir / f"{name}_correlation.csv", index=False
    )
    if plots:
        plot_bland_altman(ba, out_dir / f"{name}_bland_altman.png", title=f"Bland-Altman: {name}")
        plot_correlation(reference, corrected, corr.r, out_dir / f"{name}_correlation.png", title=name)

    return {
        "bland_altman": ba.summary(),
        "correlation": {"r": corr.r, "p_value": corr.p_value, "n": corr.n},
        "paired_test": {"statistic": test.statistic, "p_value": test.p_value, "n": test.n},
    }


def _cell(values: pd.Series, decimals: int) -> str:
    values = values.dropna()
    if values.empty:
        return ""
    sd = values.std(ddof=1) if len(values) > 1 else 0.0
    return f"{values.mean():.{decimals}f} ± {sd:.{decimals}f}"


def ablation_table(
    frames: Mapping[str, pd.DataFrame],
    metrics: Sequence[str] = ("nrmse", "ssim"),
    decimals: int = 3,
    baseline: bool = True,
) -> pd.DataFrame:
    """
    Methods as rows, (domain, metric) as columns, cells "mean ± sd"

    Args:
        frames: per-method metric frames (as written to metrics.csv)
        baseline: prepend an uncorrected short-scan row from the baseline columns
    """
    if not frames:
        raise ValidationError("No metric frames to tabulate")
    domains = sorted({d for frame in frames.values() for d in frame["domain"].unique()})
    columns = pd.MultiIndex.from_product([domains, list(metrics)], names=["domain", "metric"])

    rows: Dict[str, Dict[Any, str]] = {}
    if baseline:
        source = next((f for f in frames.values() if "baseline_nrmse" in f and f["baseline_nrmse"].notna().any()), None)
        if source is not None:
            rows[BASELINE_ROW] = {
                (d, m): _cell(source.loc[source["domain"] == d, f"baseline_{m}"], decimals)
                for d in domains for m in metrics if f"baseline_{m}" in source
            }

    for method, frame in frames.items():
        rows[method] = {
            (d, m): _cell(frame.loc[frame["domain"] == d, m], decimals) for d in domains for m in metrics
        }

    table = pd.DataFrame.from_dict(rows, orient="index").reindex(columns=columns).fillna("")
    table.index.name = "method"
    return table


def write_ablation_table(table: pd.DataFrame, out_dir: Union[str, Path], name: str = "ablation") -> Dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    flat = table.copy()
    flat.columns = [f"{d}_{m}" for d, m in table.columns]
    paths = {"csv": out_dir / f"{name}.csv", "markdown": out_dir / f"{name}.md"}
    flat.to_csv(paths["csv"])
    with open(paths["markdown"], 'w') as f:
        f.write(_markdown(flat))
    logger.info("ablation_table_written", path=str(paths["csv"]), methods=len(table))
    return paths


def _markdown(frame: pd.DataFrame) -> str:
    header = [frame.index.name or ""] + list(frame.columns)
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for index, row in frame.iterrows():
        lines.append("| " + " | ".join([str(index)] + [str(v) for v in row]) + " |")
    return "\n".join(lines) + "\n"
