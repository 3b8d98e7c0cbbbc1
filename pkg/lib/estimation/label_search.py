"""
Mapping-label estimation for unseen domains.

The label of an unseen domain is the point c of the box [-eps, 1 + eps]^N
minimizing the calibration objective

    J(c) = mean over calibration slices of mean_pixels (G(z; c) - x)^2

The box is searched exhaustively on a coarse lattice, then on a fine
lattice around the coarse optimum. Both lattices are anchored at -eps, so
with a coarse spacing that is a multiple of the fine spacing every coarse
point is also a fine point. Grid points are enumerated row-major: the first
label component varies slowest.
"""
import itertools
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch
import torch.nn as nn

from ..data.dataset import SlicePair
from ..models.conditioning import MappingLabel
from ..training.checkpoint import Checkpoint
from ..utils.config import GridSearchConfig
from ..utils.errors import DimensionError, NumericalError, ValidationError
from ..utils.logging_config import get_logger

logger = get_logger(__name__)

Point = Tuple[float, ...]
GeneratorFn = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]
CalibrationPairs = Sequence[Union[SlicePair, Tuple[np.ndarray, np.ndarray]]]

ROUND_DECIMALS = 10


@dataclass
class GridRecord:
    point: Point
    objective: float
    stage: str

    @property
    def finite(self) -> bool:
        return math.isfinite(self.objective)


@dataclass
class LabelEstimate:
    """Selected label, its objective and every evaluated grid point"""
    label: MappingLabel
    objective: float
    evaluated: List[GridRecord] = field(default_factory=list)
    excluded: List[Point] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def stage_best(self, stage: str) -> float:
        values = [r.objective for r in self.evaluated if r.stage == stage and r.finite]
        return min(values) if values else math.inf

    def surface_frame(self) -> pd.DataFrame:
        """One row per evaluated point: c0..c{N-1}, objective, stage"""
        n = len(self.label)
        rows = [
            {**{f"c{i}": p for i, p in enumerate(r.point)}, "objective": r.objective, "stage": r.stage}
            for r in self.evaluated
        ]
        return pd.DataFrame(rows, columns=[f"c{i}" for i in range(n)] + ["objective", "stage"])

    def write_surface_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        self.surface_frame().to_csv(path, index=False)
        return path

    def stages(self) -> List[str]:
        return list(dict.fromkeys(r.stage for r in self.evaluated))

    def to_dict(self) -> Dict[str, Any]:
        best = {stage: self.stage_best(stage) for stage in self.stages()}
        return {
            "label": self.label.to_list(),
            "objective": self.objective,
            "stage_objectives": {k: v if math.isfinite(v) else None for k, v in best.items()},
            "evaluated_points": len(self.evaluated),
            "excluded_points": [list(p) for p in self.excluded],
            "grid": self.metadata,
        }


class CalibrationObjective:
    """
    J(c) over a fixed calibration set.

    The generator sees inputs divided by ``scale``; the objective is
    reported in the original intensity units.
    """

    def __init__(self, generator: GeneratorFn, pairs: CalibrationPairs, scale: float = 1.0,
                 batch_size: int = 16, device: Union[str, torch.device] = "cpu",
                 dtype: torch.dtype = torch.float32):
        if not pairs:
            raise ValidationError("Calibration set is empty")
        zs, xs = [], []
        for pair in pairs:
            z, x = (pair.z, pair.x) if isinstance(pair, SlicePair) else pair
            z, x = np.asarray(z), np.asarray(x)
            if z.shape != x.shape or z.ndim != 2:
                raise DimensionError(
                    f"Calibration pair shapes {z.shape} and {x.shape} must be equal 2-D slices",
                    z_shape=z.shape, x_shape=x.shape,
                )
            zs.append(z)
            xs.append(x)
        self.generator = generator
        self.scale = float(scale)
        self.batch_size = batch_size
        self.dtype = dtype
        self.device = torch.device(device)
        self.z = torch.from_numpy(np.stack(zs)[:, None] / self.scale).to(dtype=dtype, device=self.device)
        self.x = torch.from_numpy(np.stack(xs)[:, None] / self.scale).to(dtype=dtype, device=self.device)

    def __len__(self) -> int:
        return self.z.shape[0]

    def _label(self, c) -> torch.Tensor:
        if isinstance(c, torch.Tensor):
            return c.to(dtype=self.dtype, device=self.device)
        return torch.tensor(list(c), dtype=self.dtype, device=self.device)

    def differentiable(self, c: torch.Tensor) -> torch.Tensor:
        """J(c) as a tensor, keeping the graph back to ``c``"""
        total = 0.0
        for start in range(0, len(self), self.batch_size):
            z = self.z[start:start + self.batch_size]
            x = self.x[start:start + self.batch_size]
            total = total + (self.generator(z, c) - x).pow(2).mean(dim=(1, 2, 3)).sum()
        return total / len(self) * self.scale ** 2

    def __call__(self, c) -> float:
        with torch.no_grad():
            return float(self.differentiable(self._label(c)))


def _evaluated(generator: nn.Module) -> GeneratorFn:
    """Run the generator in evaluation mode, restoring its previous mode afterwards"""
    if not generator.training:
        return generator
    lock = threading.Lock()

    def run(z: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        # grid workers share the module
        with lock:
            generator.eval()
            try:
                return generator(z, c)
            finally:
                generator.train()
    return run


def objective_for_checkpoint(checkpoint: Checkpoint, pairs: CalibrationPairs, batch_size: int = 16) -> CalibrationObjective:
    """Calibration objective driven by a checkpoint's generator in evaluation mode"""
    generator = checkpoint.generator
    param = next(generator.parameters())
    return CalibrationObjective(
        _evaluated(generator), pairs, scale=checkpoint.intensity_scale,
        batch_size=batch_size, device=param.device, dtype=param.dtype,
    )


def axis_points(lo: float, hi: float, spacing: float) -> np.ndarray:
    """lo, lo + spacing, ... up to hi inclusive, rounded to suppress drift"""
    if spacing <= 0:
        raise ValidationError(f"Grid spacing must be positive, got {spacing}", spacing=spacing)
    count = int(math.floor((hi - lo) / spacing + 1e-9)) + 1
    return np.round(lo + spacing * np.arange(count), ROUND_DECIMALS)


def grid_points(axes: Sequence[np.ndarray]) -> List[Point]:
    """Cartesian product of the axes, first axis slowest"""
    return [tuple(float(v) for v in p) for p in itertools.product(*axes)]


def _evaluate(objective: Callable[[Point], float], points: List[Point], workers: int) -> List[float]:
    if workers > 1 and len(points) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return [float(v) for v in pool.map(objective, points)]
    return [float(objective(p)) for p in points]


def objective_surface(
    objective: Callable[[Point], float],
    axes: Sequence[np.ndarray],
    workers: int = 0,
) -> np.ndarray:
    """
    Objective values over a full grid

    Args:
        objective: maps a label point to J(c)
        axes: one coordinate array per label component

    Returns:
        Array of shape (len(axes[0]), ..., len(axes[-1])); non-finite values stay NaN/inf
    """
    points = grid_points(axes)
    values = np.asarray(_evaluate(objective, points, workers), dtype=np.float64)
    bad = int((~np.isfinite(values)).sum())
    if bad:
        logger.warning("surface_non_finite_points", count=bad, total=len(points))
    return values.reshape([len(a) for a in axes])


def _best(records: List[GridRecord]) -> GridRecord:
    # ties resolve to the lexicographically smallest point
    return min((r for r in records if r.finite), key=lambda r: (r.objective, r.point))


def _fine_axes(center: Point, config: GridSearchConfig) -> List[np.ndarray]:
    lo, hi = -config.epsilon, 1.0 + config.epsilon
    lattice = axis_points(lo, hi, config.fine)
    axes = []
    for value in center:
        window = lattice[(lattice >= value - config.radius - 1e-9) & (lattice <= value + config.radius + 1e-9)]
        axes.append(np.unique(np.round(np.append(window, value), ROUND_DECIMALS)))
    return axes


def estimate_label(
    objective: Union[Checkpoint, Callable[[Point], float]],
    calibration_pairs: Optional[CalibrationPairs] = None,
    config: Optional[GridSearchConfig] = None,
    domain_count: Optional[int] = None,
    workers: int = 0,
) -> LabelEstimate:
    """
    Grid-search the mapping label minimizing the calibration objective

    Args:
        objective: a Checkpoint (with ``calibration_pairs``) or any callable J(c)
        calibration_pairs: (z, x) slices of the unseen domain
        config: search box and spacings
        domain_count: label length; taken from the checkpoint when omitted
        workers: threads evaluating grid points

    Returns:
        LabelEstimate whose label attains the minimum over all evaluated points
    """
    config = config or GridSearchConfig()
    if isinstance(objective, Checkpoint):
        if calibration_pairs is None:
            raise ValidationError("Calibration set is empty")
        domain_count = domain_count or objective.domain_count
        objective = objective_for_checkpoint(objective, calibration_pairs, config.batch_size)
    if not domain_count or domain_count < 1:
        raise ValidationError("Label estimation needs the label length", domain_count=domain_count)

    lo, hi = -config.epsilon, 1.0 + config.epsilon
    cache: Dict[Point, float] = {}
    records: List[GridRecord] = []
    excluded: List[Point] = []

    def run_stage(points: List[Point], stage: str) -> None:
        fresh = [p for p in points if p not in cache]
        for point, value in zip(fresh, _evaluate(objective, fresh, workers)):
            cache[point] = value
            records.append(GridRecord(point, value, stage))
            if not math.isfinite(value):
                excluded.append(point)
        logger.info("grid_stage_done", stage=stage, points=len(fresh), excluded=len(excluded))

    first_spacing = config.fine if config.strategy == "exhaustive" else config.coarse
    first_stage = "exhaustive" if config.strategy == "exhaustive" else "coarse"
    run_stage(grid_points([axis_points(lo, hi, first_spacing)] * domain_count), first_stage)
    if not any(r.finite for r in records):
        raise NumericalError("Objective is non-finite at every grid point", term="label_objective")

    if config.strategy == "coarse_to_fine":
        center = _best(records).point
        run_stage(grid_points(_fine_axes(center, config)), "fine")

    best = _best(records)
    if excluded:
        logger.warning("grid_points_excluded", count=len(excluded), first=list(excluded[0]))

    estimate = LabelEstimate(
        label=MappingLabel(best.point),
        objective=best.objective,
        evaluated=records,
        excluded=excluded,
        metadata={
            "epsilon": config.epsilon,
            "coarse": config.coarse,
            "fine": config.fine,
            "radius": config.radius,
            "strategy": config.strategy,
            "domain_count": domain_count,
            "order": "row-major, first component slowest",
        },
    )
    logger.info("label_estimated", label=list(best.point), objective=best.objective, points=len(records))
    return estimate


def refine_label_gradient(
    objective: CalibrationObjective,
    estimate: LabelEstimate,
    config: Optional[GridSearchConfig] = None,
) -> LabelEstimate:
    """
    Polish a grid estimate with Adam on the label alone, clamped to the box.

    The refined label is kept only when it lowers the objective.
    """
    config = config or GridSearchConfig()
    lo, hi = -config.epsilon, 1.0 + config.epsilon

    c = torch.tensor(estimate.label.to_list(), dtype=objective.dtype, device=objective.device, requires_grad=True)
    optimizer = torch.optim.Adam([c], lr=config.gradient_lr)
    for _ in range(config.gradient_steps):
        optimizer.zero_grad()
        loss = objective.differentiable(c)
        loss.backward()
        optimizer.step()
        with torch.no_grad():
            c.clamp_(lo, hi)

    point = tuple(float(v) for v in c.detach().cpu())
    value = objective(point)
    if not math.isfinite(value) or value >= estimate.objective:
        logger.info("gradient_refinement_rejected", grid_objective=estimate.objective, refined_objective=value)
        return estimate

    logger.info("gradient_refinement_accepted", grid_objective=estimate.objective, refined_objective=value)
    records = estimate.evaluated + [GridRecord(point, value, "gradient")]
    return LabelEstimate(
        label=MappingLabel(point),
        objective=value,
        evaluated=records,
        excluded=estimate.excluded,
        metadata={**estimate.metadata, "gradient_steps": config.gradient_steps, "gradient_lr": config.gradient_lr},
    )
