"""
Orthonormal 2-D Haar decomposition and reconstruction.

Used by the generators as their down-sampling and up-sampling operators.
Both functions work on the last two axes, so a single image, a feature map
or a whole batch goes through the same code path. Tensors keep autograd;
numpy arrays come back as numpy arrays.
"""
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
import torch

from ..utils.errors import DimensionError

ArrayLike = Union[torch.Tensor, np.ndarray]


@dataclass
class SubbandSet:
    """Four half-resolution subbands of one Haar level"""
    ll: ArrayLike
    lh: ArrayLike
    hl: ArrayLike
    hh: ArrayLike

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.ll.shape)

    def high(self) -> Tuple[ArrayLike, ArrayLike, ArrayLike]:
        return self.lh, self.hl, self.hh

    def energy(self) -> float:
        """Sum of squared coefficients over all four subbands"""
        return float(sum(_to_tensor(b).double().pow(2).sum() for b in (self.ll, self.lh, self.hl, self.hh)))


def _to_tensor(value: ArrayLike) -> torch.Tensor:
    if isinstance(value, torch.Tensor):
        return value
    return torch.from_numpy(np.ascontiguousarray(value))


def haar_decompose(image: ArrayLike) -> SubbandSet:
    """
    Split an image into orthonormal Haar subbands.

    For each 2x2 block [a b; c d]:
        ll = (a+b+c+d)/2, lh = (a+b-c-d)/2, hl = (a-b+c-d)/2, hh = (a-b-c+d)/2

    Args:
        image: array whose last two axes (H, W) are both even

    Returns:
        SubbandSet with each subband of shape (..., H/2, W/2)
    """
    is_numpy = isinstance(image, np.ndarray)
    x = _to_tensor(image)
    if x.dim() < 2:
        raise DimensionError("Haar decomposition needs at least a 2-D array", shape=tuple(x.shape))

    height, width = x.shape[-2], x.shape[-1]
    if height % 2:
        raise DimensionError(f"Haar decomposition needs an even height, got {height}", axis="height", size=height)
    if width % 2:
        raise DimensionError(f"Haar decomposition needs an even width, got {width}", axis="width", size=width)

    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]

    ll = (a + b + c + d) / 2
    lh = (a + b - c - d) / 2
    hl = (a - b + c - d) / 2
    hh = (a - b - c + d) / 2

    if is_numpy:
        return SubbandSet(ll.numpy(), lh.numpy(), hl.numpy(), hh.numpy())
    return SubbandSet(ll, lh, hl, hh)


def haar_reconstruct(subbands: SubbandSet) -> ArrayLike:
    """
    Exact inverse of :func:`haar_decompose`.

    Args:
        subbands: four subbands of identical shape (..., H', W')

    Returns:
        Image of shape (..., 2H', 2W')
    """
    is_numpy = isinstance(subbands.ll, np.ndarray)
    ll, lh, hl, hh = (_to_tensor(b) for b in (subbands.ll, subbands.lh, subbands.hl, subbands.hh))

    shapes = {tuple(b.shape) for b in (ll, lh, hl, hh)}
    if len(shapes) != 1:
        raise DimensionError("Subband shapes disagree", shapes=sorted(shapes))
    if ll.dim() < 2:
        raise DimensionError("Subbands must be at least 2-D", shape=tuple(ll.shape))

    a = (ll + lh + hl + hh) / 2
    b = (ll + lh - hl - hh) / 2
    c = (ll - lh + hl - hh) / 2
    d = (ll - lh - hl + hh) / 2

    # (..., H', W', row offset, column offset) -> (..., H', row offset, W', column offset)
    blocks = torch.stack([torch.stack([a, b], dim=-1), torch.stack([c, d], dim=-1)], dim=-2)
    blocks = blocks.movedim(-2, -3)
    lead = ll.shape[:-2]
    out = blocks.reshape(*lead, 2 * ll.shape[-2], 2 * ll.shape[-1])

    return out.numpy() if is_numpy else out
