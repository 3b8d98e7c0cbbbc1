"""
Slice-by-slice application of a trained generator to whole volumes
"""
from typing import Optional, Sequence, Union

import numpy as np
import torch
import torch.nn as nn

from ..data.preprocessing import pad_or_crop, undo_pad_or_crop
from ..data.volume import Volume
from ..models.conditioning import MappingLabel
from ..utils.errors import ConfigurationError
from ..utils.logging_config import get_logger
from .checkpoint import Checkpoint

logger = get_logger(__name__)

LabelLike = Union[MappingLabel, Sequence[float], np.ndarray, torch.Tensor, None]


def resolve_label(checkpoint: Checkpoint, c: LabelLike) -> Optional[torch.Tensor]:
    """
    Turn a label into the tensor the generator expects.

    Label-free modes ignore ``c`` entirely, so any value (or None) gives the
    same output.
    """
    if not checkpoint.mode.uses_labels:
        return None
    if c is None:
        raise ConfigurationError(f"Mode {checkpoint.mode.value} needs a mapping label")
    label = MappingLabel.of(c).validate(checkpoint.domain_count)
    param = next(checkpoint.generator.parameters())
    return label.to_tensor(dtype=param.dtype, device=param.device)


def restore_slices(
    generator: nn.Module,
    slices: np.ndarray,
    c: Optional[torch.Tensor],
    scale: float = 1.0,
    batch_size: int = 16,
) -> np.ndarray:
    """
    Run ``generator`` over a (S, H, W) stack in evaluation mode

    Inputs are divided by ``scale`` before the forward pass and outputs
    multiplied back, so voxel units are preserved.
    """
    param = next(generator.parameters())
    was_training = generator.training
    generator.eval()
    outputs = []
    with torch.no_grad():
        for start in range(0, slices.shape[0], batch_size):
            chunk = torch.from_numpy(np.ascontiguousarray(slices[start:start + batch_size]) / scale)
            chunk = chunk.to(dtype=param.dtype, device=param.device).unsqueeze(1)
            out = generator(chunk, c)
            outputs.append(out[:, 0].cpu().numpy().astype(np.float64) * scale)
    generator.train(was_training)
    return np.concatenate(outputs, axis=0) if outputs else np.zeros_like(slices, dtype=np.float64)


def infer(checkpoint: Checkpoint, volume: Volume, c: LabelLike = None, batch_size: int = 16) -> Volume:
    """
    Correct every slice of a volume with the checkpoint's generator

    Args:
        checkpoint: trained networks
        volume: short-scan volume
        c: mapping label (ignored by label-free modes)
        batch_size: slices per forward pass

    Returns:
        Corrected volume with the input geometry
    """
    label = resolve_label(checkpoint, c)
    padded, record = pad_or_crop(volume, checkpoint.divisor, mode="pad")

    corrected = restore_slices(
        checkpoint.generator, padded.voxels, label, checkpoint.intensity_scale, batch_size
    )
    out = undo_pad_or_crop(padded.with_voxels(corrected.astype(np.float32)), record)

    tags = {"corrected_by": checkpoint.mode.value}
    if label is not None:
        tags["mapping_label"] = label.cpu().tolist()
    logger.debug("volume_corrected", slices=volume.slice_count, mode=checkpoint.mode.value)
    return out.with_voxels(out.voxels, **tags)
