"""
Deterministic structured phantoms standing in for brain volumes
"""
from dataclasses import dataclass, field
from typing import Dict, Sequence, Tuple

import numpy as np

from ..utils.errors import ValidationError
from .volume import Volume

PHANTOM_KINDS = ("ellipsoids", "checker", "blobs")


@dataclass
class Phantom:
    """Phantom volume plus named region masks and their mean intensities"""
    volume: Volume
    masks: Dict[str, np.ndarray] = field(default_factory=dict)
    region_means: Dict[str, float] = field(default_factory=dict)


def _grid(dims: Sequence[int]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    # normalized coordinates in [-1, 1] per axis; single-element axes sit at 0
    axes = [np.linspace(-1.0, 1.0, d) if d > 1 else np.zeros(1) for d in dims]
    return np.meshgrid(*axes, indexing='ij')


def _ellipsoid(coords, center, radii) -> np.ndarray:
    zz, yy, xx = coords
    return (((zz - center[0]) / radii[0]) ** 2
            + ((yy - center[1]) / radii[1]) ** 2
            + ((xx - center[2]) / radii[2]) ** 2) <= 1.0


def _ellipsoids(dims, rng: np.random.Generator, amplitude: float):
    coords = _grid(dims)
    jitter = rng.uniform(-0.05, 0.05, size=6)

    head = _ellipsoid(coords, (0.0, 0.0, 0.0), (0.95, 0.85 + jitter[0], 0.75 + jitter[1]))
    reference = _ellipsoid(coords, (0.0, 0.45 + jitter[2], 0.0), (0.6, 0.2, 0.3)) & head
    target = _ellipsoid(coords, (0.0, -0.25 + jitter[3], jitter[4]), (0.6, 0.3, 0.35 + jitter[5])) & head & ~reference

    # region values: background 0, head 0.3A, reference 0.5A, target A
    levels = {"head": 0.3 * amplitude, "reference": 0.5 * amplitude, "target": amplitude}
    voxels = np.zeros(dims, dtype=np.float64)
    voxels[head] = levels["head"]
    voxels[reference] = levels["reference"]
    voxels[target] = levels["target"]

    masks = {
        "background": ~head,
        "head": head & ~reference & ~target,
        "reference": reference,
        "target": target,
    }
    return voxels, masks


def _checker(dims, rng: np.random.Generator, amplitude: float):
    block = int(rng.integers(2, max(3, min(dims[1:]) // 4 + 1)))
    rows = np.arange(dims[1])[:, None] // block
    cols = np.arange(dims[2])[None, :] // block
    plane = ((rows + cols) % 2).astype(bool)
    high = np.broadcast_to(plane, dims).copy()

    voxels = np.where(high, amplitude, 0.2 * amplitude)
    return voxels, {"target": high, "reference": ~high}


def _blobs(dims, rng: np.random.Generator, amplitude: float, count: int = 6):
    coords = _grid(dims)
    voxels = np.zeros(dims, dtype=np.float64)
    for _ in range(count):
        center = rng.uniform(-0.6, 0.6, size=3)
        width = rng.uniform(0.15, 0.4)
        weight = rng.uniform(0.3, 1.0)
        dist2 = sum((c - m) ** 2 for c, m in zip(coords, center))
        voxels += weight * np.exp(-dist2 / (2 * width ** 2))
    voxels *= amplitude / voxels.max()

    target = voxels >= 0.5 * amplitude
    reference = (voxels > 0.05 * amplitude) & ~target
    return voxels, {"target": target, "reference": reference}


def make_phantom(
    kind: str,
    dims: Sequence[int],
    seed: int,
    amplitude: float = 1000.0,
    spacing: Sequence[float] = (2.0, 2.0, 2.0),
    multiple: int = 16,
) -> Phantom:
    """
    Build a nonnegative phantom with region masks

    Args:
        kind: ``ellipsoids``, ``checker`` or ``blobs``
        dims: (slices, rows, columns); rows and columns divisible by ``multiple``
        seed: phantom layout seed
        amplitude: peak intensity
        spacing: voxel spacing in mm
        multiple: required divisor of the slice plane

    Returns:
        Phantom with masks keyed by region name
    """
    if kind not in PHANTOM_KINDS:
        raise ValidationError(f"Unknown phantom kind '{kind}'; expected one of {PHANTOM_KINDS}", kind=kind)
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or any(d < 1 for d in dims):
        raise ValidationError(f"Phantom dims must be three positive integers, got {dims}", dims=dims)
    if dims[1] % multiple or dims[2] % multiple:
        raise ValidationError(
            f"Phantom plane {dims[1]}x{dims[2]} is not divisible by {multiple}", dims=dims, multiple=multiple
        )
    if amplitude <= 0:
        raise ValidationError(f"Phantom amplitude must be positive, got {amplitude}", amplitude=amplitude)

    rng = np.random.default_rng(seed)
    builder = {"ellipsoids": _ellipsoids, "checker": _checker, "blobs": _blobs}[kind]
    voxels, masks = builder(dims, rng, amplitude)

    volume = Volume(voxels=voxels, spacing=tuple(spacing), metadata={"phantom": kind, "seed": int(seed)})
    region_means = {
        name: float(volume.voxels[mask].mean()) for name, mask in masks.items() if mask.any()
    }
    return Phantom(volume=volume, masks={k: np.asarray(v, dtype=bool) for k, v in masks.items()},
                   region_means=region_means)
