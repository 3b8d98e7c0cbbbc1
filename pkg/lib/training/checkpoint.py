"""
Checkpoint directories: a JSON manifest plus raw little-endian tensor blobs.

Layout::

    <dir>/manifest.json   schema version, experiment config, tensor index
    <dir>/G.raw           generator parameters and buffers
    <dir>/F.raw           backward generator
    <dir>/D_X.raw         clean-domain discriminator
    <dir>/D_Z.raw         short-scan discriminator
    <dir>/rng.raw         torch random state

Each blob is the concatenation of its tensors in manifest order; the index
records dtype, shape, byte offset and byte length of every tensor.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import torch
import torch.nn as nn

from ..models.networks import build_discriminator, build_generator
from ..utils.config import ExperimentConfig, TrainingMode
from ..utils.errors import IngestionError
from ..utils.logging_config import get_logger

logger = get_logger(__name__)

CHECKPOINT_SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"
NETWORKS = ("G", "F", "D_X", "D_Z")

_DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
    torch.uint8: "|u1",
}
_TORCH_DTYPES = {v: k for k, v in _DTYPES.items()}


@dataclass
class Checkpoint:
    """Trained networks plus everything needed to rebuild and reuse them"""
    generator: nn.Module
    backward: nn.Module
    disc_x: nn.Module
    disc_z: nn.Module
    config: ExperimentConfig
    epoch: int = 0
    intensity_scale: float = 1.0
    rng_state: Optional[torch.Tensor] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def mode(self) -> TrainingMode:
        return self.config.train.mode

    @property
    def domain_count(self) -> int:
        return self.config.generator.domain_count

    @property
    def divisor(self) -> int:
        return self.config.generator.divisor

    def networks(self) -> Dict[str, nn.Module]:
        return dict(zip(NETWORKS, (self.generator, self.backward, self.disc_x, self.disc_z)))

    def eval(self) -> "Checkpoint":
        for net in self.networks().values():
            net.eval()
        return self

    def to(self, device: Union[str, torch.device]) -> "Checkpoint":
        for net in self.networks().values():
            net.to(device)
        return self


def _write_blob(path: Path, tensors: Dict[str, torch.Tensor]) -> List[Dict[str, Any]]:
    index = []
    offset = 0
    with open(path, 'wb') as f:
        for name, tensor in tensors.items():
            if tensor.dtype not in _DTYPES:
                raise IngestionError(f"Cannot serialize tensor {name} of dtype {tensor.dtype}", tensor=name)
            dtype = _DTYPES[tensor.dtype]
            data = np.ascontiguousarray(tensor.detach().cpu().numpy(), dtype=dtype).tobytes(order='C')
            f.write(data)
            index.append({
                "name": name,
                "dtype": dtype,
                "shape": list(tensor.shape),
                "offset": offset,
                "nbytes": len(data),
            })
            offset += len(data)
    return index


def _read_blob(path: Path, index: List[Dict[str, Any]]) -> Dict[str, torch.Tensor]:
    if not path.exists():
        raise IngestionError(f"Checkpoint blob missing: {path}", path=str(path))
    raw = path.read_bytes()
    tensors = {}
    for entry in index:
        start, nbytes = int(entry["offset"]), int(entry["nbytes"])
        if start + nbytes > len(raw):
            raise IngestionError(
                f"Checkpoint blob {path.name} is truncated at tensor {entry['name']}",
                path=str(path), expected_bytes=start + nbytes, actual_bytes=len(raw),
            )
        dtype = entry["dtype"]
        if dtype not in _TORCH_DTYPES:
            raise IngestionError(f"Unsupported tensor dtype '{dtype}'", tensor=entry["name"])
        array = np.frombuffer(raw, dtype=dtype, count=nbytes // np.dtype(dtype).itemsize, offset=start)
        tensors[entry["name"]] = torch.from_numpy(array.reshape(entry["shape"]).copy())
    return tensors


def save_checkpoint(checkpoint: Checkpoint, path: Union[str, Path]) -> Path:
    """Write a checkpoint directory"""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)

    tensor_index = {}
    for name, net in checkpoint.networks().items():
        tensor_index[name] = _write_blob(path / f"{name}.raw", net.state_dict())
    if checkpoint.rng_state is not None:
        tensor_index["rng"] = _write_blob(path / "rng.raw", {"torch": checkpoint.rng_state})

    manifest = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "epoch": checkpoint.epoch,
        "mode": checkpoint.mode.value,
        "intensity_scale": checkpoint.intensity_scale,
        "config_hash": checkpoint.config.config_hash(),
        "config": checkpoint.config.model_dump(mode='json'),
        "tensors": tensor_index,
        "extra": checkpoint.extra,
    }
    with open(path / MANIFEST_NAME, 'w') as f:
        json.dump(manifest, f, indent=2)

    logger.info("checkpoint_saved", path=str(path), epoch=checkpoint.epoch,
                tensors=sum(len(v) for v in tensor_index.values()))
    return path


def load_checkpoint(path: Union[str, Path], device: Union[str, torch.device] = "cpu") -> Checkpoint:
    """Rebuild the networks from the stored config and load their tensors"""
    path = Path(path)
    try:
        with open(path / MANIFEST_NAME, 'r') as f:
            manifest = json.load(f)
    except FileNotFoundError:
        raise IngestionError(f"No checkpoint manifest in {path}", path=str(path))
    except json.JSONDecodeError as e:
        raise IngestionError(f"Malformed checkpoint manifest in {path}: {e}", path=str(path))

    version = manifest.get("schema_version")
    if version != CHECKPOINT_SCHEMA_VERSION:
        raise IngestionError(f"Unsupported checkpoint schema version {version}", path=str(path))

    config = ExperimentConfig(**manifest["config"])
    gen_config = config.generator.model_copy(update={"conditioned": config.train.mode.uses_labels})
    nets = {
        "G": build_generator(gen_config, config.train.init_std),
        "F": build_generator(gen_config, config.train.init_std),
        "D_X": build_discriminator(config.discriminator, config.train.init_std),
        "D_Z": build_discriminator(config.discriminator, config.train.init_std),
    }
    index = manifest.get("tensors", {})
    for name, net in nets.items():
        if name not in index:
            raise IngestionError(f"Checkpoint manifest has no tensors for {name}", path=str(path))
        state = _read_blob(path / f"{name}.raw", index[name])
        try:
            net.load_state_dict(state, strict=True)
        except RuntimeError as e:
            raise IngestionError(f"Tensors for {name} do not match the architecture: {e}", path=str(path))

    rng_state = None
    if "rng" in index:
        rng_state = _read_blob(path / "rng.raw", index["rng"])["torch"]

    checkpoint = Checkpoint(
        generator=nets["G"], backward=nets["F"], disc_x=nets["D_X"], disc_z=nets["D_Z"],
        config=config, epoch=int(manifest.get("epoch", 0)),
        intensity_scale=float(manifest.get("intensity_scale", 1.0)),
        rng_state=rng_state, extra=manifest.get("extra") or {},
    )
    logger.info("checkpoint_loaded", path=str(path), epoch=checkpoint.epoch, mode=checkpoint.mode.value)
    return checkpoint.to(device).eval()
