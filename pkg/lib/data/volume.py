"""
Volume type and on-disk formats.

Two formats are read: the portable container (a directory holding
``manifest.json`` and ``voxels.raw``, little-endian float32, C row-major in
(slice, row, column) order) and uncompressed single-file NIfTI-1. Only the
container is written.
"""
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import nibabel as nib
import numpy as np

from ..utils.errors import IngestionError, ValidationError
from ..utils.logging_config import get_logger

logger = get_logger(__name__)

CONTAINER_SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"
PAYLOAD_NAME = "voxels.raw"

# NIfTI-1 datatype codes accepted on import
NIFTI_DATATYPES = {
    4: "int16",
    16: "float32",
    64: "float64",
    512: "uint16",
}


@dataclass
class Volume:
    """3-D scalar field in (slice, row, column) order with its geometry"""
    voxels: np.ndarray
    spacing: Optional[Tuple[float, float, float]] = (1.0, 1.0, 1.0)
    intensity_units: str = "counts"
    scan_duration_min: Optional[float] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels, dtype=np.float32)
        if self.voxels.ndim != 3:
            raise ValidationError(f"Volume must be 3-D, got shape {self.voxels.shape}", shape=self.voxels.shape)
        if min(self.voxels.shape) < 1:
            raise ValidationError(f"Volume dimensions must be >= 1, got {self.voxels.shape}", shape=self.voxels.shape)
        if not np.all(np.isfinite(self.voxels)):
            raise ValidationError("Volume contains NaN or infinite voxels")
        if self.spacing is not None:
            self.spacing = tuple(float(s) for s in self.spacing)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(self.voxels.shape)

    @property
    def slice_count(self) -> int:
        return self.voxels.shape[0]

    def with_voxels(self, voxels: np.ndarray, **metadata: Any) -> "Volume":
        """Same geometry and tags, new voxel data"""
        merged = {**self.metadata, **metadata}
        return replace(self, voxels=voxels, metadata=merged)


def save_volume(volume: Volume, path: Union[str, Path]) -> Path:
    """Write a volume as a container directory"""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)

    payload = np.ascontiguousarray(volume.voxels, dtype='<f4')
    manifest = {
        "schema_version": CONTAINER_SCHEMA_VERSION,
        "dims": list(payload.shape),
        "spacing_mm": list(volume.spacing) if volume.spacing is not None else None,
        "dtype": "float32",
        "byte_order": "little",
        "order": "C",
        "axes": ["slice", "row", "column"],
        "intensity_units": volume.intensity_units,
        "scan_duration_min": volume.scan_duration_min,
        "metadata": volume.metadata,
    }
    (path / PAYLOAD_NAME).write_bytes(payload.tobytes(order='C'))
    with open(path / MANIFEST_NAME, 'w') as f:
        json.dump(manifest, f, indent=2)

    logger.debug("volume_saved", path=str(path), dims=manifest["dims"])
    return path


def load_volume(path: Union[str, Path]) -> Volume:
    """
    Load a container directory or an uncompressed NIfTI-1 file

    Args:
        path: container directory or ``.nii`` file

    Returns:
        Volume in (slice, row, column) order
    """
    path = Path(path)
    if path.is_dir():
        return _load_container(path)
    if path.name.endswith(".nii.gz"):
        raise IngestionError(f"Compressed NIfTI is not supported: {path}", path=str(path))
    if path.suffix == ".nii":
        return _load_nifti(path)
    if not path.exists():
        raise IngestionError(f"Volume path does not exist: {path}", path=str(path))
    raise IngestionError(f"Unrecognized volume format: {path}", path=str(path))


def _load_container(path: Path) -> Volume:
    manifest_path = path / MANIFEST_NAME
    payload_path = path / PAYLOAD_NAME
    try:
        with open(manifest_path, 'r') as f:
            manifest = json.load(f)
    except FileNotFoundError:
        raise IngestionError(f"Container has no {MANIFEST_NAME}: {path}", path=str(path))
    except json.JSONDecodeError as e:
        raise IngestionError(f"Malformed manifest in {path}: {e}", path=str(path))

    for key in ("dims", "dtype"):
        if key not in manifest:
            raise IngestionError(f"Manifest in {path} is missing '{key}'", path=str(path), field=key)
    if manifest["dtype"] != "float32":
        raise IngestionError(f"Unsupported container dtype '{manifest['dtype']}'", path=str(path))
    if manifest.get("byte_order", "little") != "little":
        raise IngestionError("Container payload must be little-endian", path=str(path))

    dims = [int(d) for d in manifest["dims"]]
    if len(dims) != 3:
        raise IngestionError(f"Container dims must have three entries, got {dims}", path=str(path))

    if not payload_path.exists():
        raise IngestionError(f"Container has no {PAYLOAD_NAME}: {path}", path=str(path))
    raw = payload_path.read_bytes()
    expected = int(np.prod(dims)) * 4
    if len(raw) != expected:
        raise IngestionError(
            f"Payload size mismatch in {path}: expected {expected} bytes, found {len(raw)}",
            path=str(path), expected_bytes=expected, actual_bytes=len(raw),
        )

    voxels = np.frombuffer(raw, dtype='<f4').reshape(dims).astype(np.float32)
    try:
        return Volume(
            voxels=voxels,
            spacing=manifest.get("spacing_mm"),
            intensity_units=manifest.get("intensity_units", "counts"),
            scan_duration_min=manifest.get("scan_duration_min"),
            metadata=manifest.get("metadata") or {},
        )
    except ValidationError as e:
        raise IngestionError(f"Invalid voxels in {path}: {e.message}", path=str(path))


def _load_nifti(path: Path) -> Volume:
    try:
        image = nib.Nifti1Image.from_filename(str(path))
    except Exception as e:
        raise IngestionError(f"Cannot read NIfTI-1 file {path}: {e}", path=str(path))

    header = image.header
    code = int(header['datatype'])
    if code not in NIFTI_DATATYPES:
        raise IngestionError(
            f"Unsupported NIfTI datatype code {code}; supported: {sorted(NIFTI_DATATYPES.values())}",
            path=str(path), datatype=code,
        )

    data = np.asanyarray(image.dataobj)
    while data.ndim > 3 and data.shape[-1] == 1:
        data = data[..., 0]
    if data.ndim != 3:
        raise IngestionError(f"NIfTI volume must be 3-D, got shape {data.shape}", path=str(path))

    # NIfTI stores (x=column, y=row, z=slice)
    voxels = np.transpose(data, (2, 1, 0)).astype(np.float32)
    zooms = header.get_zooms()[:3]
    spacing = (float(zooms[2]), float(zooms[1]), float(zooms[0]))

    logger.info("nifti_loaded", path=str(path), dims=list(voxels.shape), datatype=NIFTI_DATATYPES[code])
    try:
        return Volume(voxels=voxels, spacing=spacing, metadata={"source": str(path)})
    except ValidationError as e:
        raise IngestionError(f"Invalid voxels in {path}: {e.message}", path=str(path))
