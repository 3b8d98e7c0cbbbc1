"""
Volume preprocessing: Gaussian smoothing, crop-or-pad to the network
divisor, air-slice detection and intensity scaling
"""
from dataclasses import asdict, dataclass
from typing import Dict, Literal, Tuple

import numpy as np
from scipy import ndimage

from ..utils.errors import ValidationError
from .volume import Volume

FWHM_TO_SIGMA = 2.3548


def gaussian_smooth(volume: Volume, fwhm_mm: float) -> Volume:
    """
    Separable Gaussian filter with sigma_voxels = fwhm_mm / (2.3548 * spacing)

    Edges replicate the border voxel, so constant volumes stay constant.
    """
    if fwhm_mm < 0:
        raise ValidationError(f"FWHM must be >= 0, got {fwhm_mm}", fwhm_mm=fwhm_mm)
    if fwhm_mm == 0:
        return volume.with_voxels(volume.voxels.copy())
    if volume.spacing is None or any(s <= 0 for s in volume.spacing):
        raise ValidationError("Gaussian smoothing needs a known positive voxel spacing", spacing=volume.spacing)

    sigma = [fwhm_mm / (FWHM_TO_SIGMA * s) for s in volume.spacing]
    smoothed = ndimage.gaussian_filter(volume.voxels.astype(np.float64), sigma=sigma, mode='nearest')
    return volume.with_voxels(smoothed.astype(np.float32))


@dataclass
class PadRecord:
    """How a slice plane was padded or cropped, so the transform can be undone"""
    original_rows: int
    original_cols: int
    top: int
    bottom: int
    left: int
    right: int

    def to_dict(self) -> Dict[str, int]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, int]) -> "PadRecord":
        return cls(**{k: int(data[k]) for k in cls.__dataclass_fields__})


def _target_size(size: int, multiple: int, mode: str) -> int:
    if mode == "pad":
        return -(-size // multiple) * multiple
    nearest = int(round(size / multiple)) * multiple
    return max(nearest, multiple)


def _split(delta: int) -> Tuple[int, int]:
    before = delta // 2
    return before, delta - before


def pad_or_crop(volume: Volume, multiple: int, mode: Literal["nearest", "pad"] = "nearest") -> Tuple[Volume, PadRecord]:
    """
    Bring rows and columns to a multiple of ``multiple``.

    ``nearest`` center-crops or zero-pads to the closest multiple;
    ``pad`` always zero-pads up, which keeps the transform invertible.
    Positive record offsets are padding, negative offsets are cropping.
    """
    if multiple < 1:
        raise ValidationError(f"Multiple must be >= 1, got {multiple}", multiple=multiple)
    if mode not in ("nearest", "pad"):
        raise ValidationError(f"Unknown pad mode '{mode}'", mode=mode)

    _, rows, cols = volume.shape
    offsets = []
    for size in (rows, cols):
        offsets.extend(_split(_target_size(size, multiple, mode) - size))
    top, bottom, left, right = offsets
    record = PadRecord(rows, cols, top, bottom, left, right)

    voxels = volume.voxels
    # crop first (negative offsets), then pad (positive offsets)
    r0, r1 = max(-top, 0), rows - max(-bottom, 0)
    c0, c1 = max(-left, 0), cols - max(-right, 0)
    voxels = voxels[:, r0:r1, c0:c1]
    voxels = np.pad(voxels, ((0, 0), (max(top, 0), max(bottom, 0)), (max(left, 0), max(right, 0))))

    return volume.with_voxels(voxels, pad_record=record.to_dict()), record


def undo_pad_or_crop(volume: Volume, record: PadRecord) -> Volume:
    """Return a padded volume to its original plane size (cropped borders come back as zeros)"""
    voxels = volume.voxels
    _, rows, cols = voxels.shape
    # strip padding
    voxels = voxels[:, max(record.top, 0):rows - max(record.bottom, 0), max(record.left, 0):cols - max(record.right, 0)]
    # restore cropped borders
    voxels = np.pad(voxels, ((0, 0), (max(-record.top, 0), max(-record.bottom, 0)), (max(-record.left, 0), max(-record.right, 0))))

    metadata = {k: v for k, v in volume.metadata.items() if k != "pad_record"}
    restored = volume.with_voxels(voxels)
    restored.metadata = metadata
    return restored


def content_slices(voxels: np.ndarray, threshold: float = 0.01) -> np.ndarray:
    """
    Boolean mask of slices whose mean exceeds ``threshold`` times the volume max.

    An all-zero volume has no content slices.
    """
    peak = float(np.max(voxels)) if voxels.size else 0.0
    if peak <= 0:
        return np.zeros(voxels.shape[0], dtype=bool)
    return voxels.reshape(voxels.shape[0], -1).mean(axis=1) >= threshold * peak


def intensity_scale(volumes) -> float:
    """Largest voxel value across standard-scan volumes, used to bring inputs near unit range"""
    peak = max((float(np.max(v.voxels)) for v in volumes), default=0.0)
    return peak if peak > 0 else 1.0
