import math

import numpy as np
import pandas as pd
import pytest

from conftest import passthrough_checkpoint, tiny_experiment
from lib.estimation.label_search import (
    CalibrationObjective,
    axis_points,
    estimate_label,
    grid_points,
    objective_for_checkpoint,
    objective_surface,
    refine_label_gradient,
)
from lib.utils.config import GridSearchConfig
from lib.utils.errors import DimensionError, NumericalError, ValidationError


def shifted_pairs(offset: float, count: int = 3):
    rng = np.random.default_rng(0)
    pairs = []
    for _ in range(count):
        z = rng.uniform(0, 1, size=(4, 4))
        pairs.append((z, z + offset))
    return pairs


def add_label(z, c):
    return z + c


def test_one_dimensional_generator_recovers_offset():
    objective = CalibrationObjective(add_label, shifted_pairs(1.0))
    config = GridSearchConfig(epsilon=0.0, coarse=0.5, fine=0.5, strategy="exhaustive")

    estimate = estimate_label(objective, config=config, domain_count=1)

    assert estimate.label.to_list() == [1.0]
    assert estimate.objective == pytest.approx(0.0, abs=1e-10)
    assert sorted(r.point[0] for r in estimate.evaluated) == [0.0, 0.5, 1.0]


def test_coarse_to_fine_lands_on_fine_lattice():
    estimate = estimate_label(lambda c: (c[0] - 0.52) ** 2, domain_count=1)

    assert estimate.label.to_list() == pytest.approx([0.52])
    assert estimate.objective == pytest.approx(0.0, abs=1e-12)
    assert {r.stage for r in estimate.evaluated} == {"coarse", "fine"}

    summary = estimate.to_dict()
    assert list(summary["stage_objectives"]) == ["coarse", "fine"]
    assert summary["stage_objectives"]["coarse"] == pytest.approx(0.02 ** 2)
    assert summary["stage_objectives"]["fine"] == pytest.approx(0.0, abs=1e-12)


def quadratic(c):
    return (c[0] - 0.3) ** 2 + 2 * (c[1] - 0.713) ** 2


def test_exhaustive_matches_brute_force_surface():
    config = GridSearchConfig(strategy="exhaustive")
    axis = axis_points(-0.1, 1.1, 0.02)

    surface = objective_surface(quadratic, [axis, axis])
    i, j = np.unravel_index(np.argmin(surface), surface.shape)
    estimate = estimate_label(quadratic, config=config, domain_count=2)

    assert estimate.label.to_list() == pytest.approx([axis[i], axis[j]])
    assert estimate.objective == pytest.approx(surface[i, j])
    assert len(estimate.evaluated) == len(axis) ** 2


def test_coarse_to_fine_matches_exhaustive_on_convex_objective():
    exhaustive = estimate_label(quadratic, config=GridSearchConfig(strategy="exhaustive"), domain_count=2)
    refined = estimate_label(quadratic, config=GridSearchConfig(), domain_count=2)

    assert refined.label == exhaustive.label
    assert refined.label.to_list() == pytest.approx([0.3, 0.72])
    assert len(refined.evaluated) < len(exhaustive.evaluated)


def test_ties_resolve_to_smallest_point():
    estimate = estimate_label(lambda c: 0.0, domain_count=2)

    assert estimate.label.to_list() == pytest.approx([-0.1, -0.1])


def test_non_finite_points_are_excluded():
    def objective(c):
        return math.nan if c[0] > 0.9 else (c[0] - 1.0) ** 2

    estimate = estimate_label(objective, domain_count=1)

    assert estimate.label.to_list() == pytest.approx([0.9])
    assert estimate.excluded
    assert all(p[0] > 0.9 for p in estimate.excluded)
    assert math.isfinite(estimate.objective)


def test_all_non_finite_raises():
    with pytest.raises(NumericalError):
        estimate_label(lambda c: math.inf, domain_count=2)


def test_empty_calibration_set():
    checkpoint = passthrough_checkpoint(tiny_experiment())

    with pytest.raises(ValidationError):
        CalibrationObjective(add_label, [])
    with pytest.raises(ValidationError):
        estimate_label(checkpoint, None)


def test_calibration_pairs_must_be_matching_slices():
    with pytest.raises(DimensionError):
        CalibrationObjective(add_label, [(np.zeros((4, 4)), np.zeros((4, 5)))])


def test_missing_label_length():
    with pytest.raises(ValidationError):
        estimate_label(lambda c: 0.0)


def test_checkpoint_search_with_label_free_generator():
    config = tiny_experiment()
    checkpoint = passthrough_checkpoint(config, scale=2.0)

    estimate = estimate_label(checkpoint, shifted_pairs(0.25), config.grid_search)

    assert estimate.label.to_list() == [0.0, 0.0, 0.0]
    assert estimate.objective == pytest.approx(0.0625, rel=1e-5)
    assert estimate.metadata["domain_count"] == 3


def test_checkpoint_objective_keeps_generator_mode():
    checkpoint = passthrough_checkpoint(tiny_experiment(), scale=2.0)
    generator = checkpoint.generator.train()
    modes = []
    generator.register_forward_hook(lambda module, inputs, output: modes.append(module.training))

    objective = objective_for_checkpoint(checkpoint, shifted_pairs(0.25))
    value = objective([0.0, 0.0, 0.0])

    assert value == pytest.approx(0.0625, rel=1e-5)
    assert modes and not any(modes)
    assert generator.training

    generator.eval()
    objective_for_checkpoint(checkpoint, shifted_pairs(0.25))([0.0, 0.0, 0.0])
    assert not generator.training


def test_fine_lattice_contains_coarse_points():
    coarse = axis_points(-0.1, 1.1, 0.1)
    fine = axis_points(-0.1, 1.1, 0.02)

    assert len(coarse) == 13
    assert len(fine) == 61
    assert set(coarse) <= set(fine)


def test_grid_points_first_axis_slowest():
    points = grid_points([np.array([0.0, 1.0]), np.array([0.0, 0.5])])

    assert points == [(0.0, 0.0), (0.0, 0.5), (1.0, 0.0), (1.0, 0.5)]


def test_axis_points_rejects_non_positive_spacing():
    with pytest.raises(ValidationError):
        axis_points(0.0, 1.0, 0.0)


class TestGradientRefinement:
    def test_improves_off_lattice_optimum(self):
        objective = CalibrationObjective(add_label, shifted_pairs(0.537))
        config = GridSearchConfig(epsilon=0.0, coarse=0.1, fine=0.1, strategy="exhaustive",
                                  gradient_steps=200, gradient_lr=0.01)

        grid = estimate_label(objective, config=config, domain_count=1)
        refined = refine_label_gradient(objective, grid, config)

        assert grid.label.to_list() == pytest.approx([0.5])
        assert refined.objective < grid.objective
        assert refined.evaluated[-1].stage == "gradient"
        assert 0.0 <= refined.label.values[0] <= 1.0

    def test_keeps_grid_estimate_at_exact_optimum(self):
        objective = CalibrationObjective(add_label, shifted_pairs(0.5))
        config = GridSearchConfig(epsilon=0.0, coarse=0.1, fine=0.1, strategy="exhaustive", gradient_steps=5)

        grid = estimate_label(objective, config=config, domain_count=1)

        assert refine_label_gradient(objective, grid, config) is grid


def test_surface_csv_lists_every_point(tmp_path):
    estimate = estimate_label(quadratic, domain_count=2)

    path = estimate.write_surface_csv(tmp_path / "surface.csv")
    frame = pd.read_csv(path)

    assert list(frame.columns) == ["c0", "c1", "objective", "stage"]
    assert len(frame) == len(estimate.evaluated)
    assert estimate.to_dict()["evaluated_points"] == len(frame)
