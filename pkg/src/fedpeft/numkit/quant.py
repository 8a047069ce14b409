"""Blockwise absmax int8 storage for frozen weights."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .tensor import Tensor, default_dtype


@dataclass(frozen=True, eq=False)
class QuantizedTensor:
    shape: tuple
    block: int
    scales: np.ndarray  # float32, one per block: absmax / 127
    codes: np.ndarray  # int8, flattened row-major

    @property
    def nbytes(self):
        return int(self.codes.nbytes + self.scales.nbytes)

    def dequantize_array(self, dtype=None):
        dtype = default_dtype() if dtype is None else np.dtype(dtype)
        flat = kernels.dequantize_blocks(self.codes, self.scales, self.block, dtype)
        return flat.reshape(self.shape)


def quantize(t, block=64):
    """Per-block absmax scaling with round-half-away-from-zero to int8."""
    if block < 2:
        raise ValueError("block size must be >= 2")
    data = t.data if isinstance(t, Tensor) else np.asarray(t)
    codes, scales = kernels.quantize_blocks(data.reshape(-1), block)
    codes.setflags(write=False)
    scales.setflags(write=False)
    return QuantizedTensor(tuple(data.shape), int(block), scales, codes)


def dequantize(q):
    return Tensor(q.dequantize_array())
