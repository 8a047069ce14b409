"""Tensor arithmetic, reverse-mode gradients, seeded streams and optimizers."""
from . import kernels, memory
from .optim import OptimizerState, make_optimizer, optimizer_step, zero_grads
from .quant import QuantizedTensor, dequantize, quantize
from .rng import Rng
from .tensor import (
    NonFiniteError,
    Tensor,
    add,
    as_tensor,
    causal_softmax,
    cross_entropy_rows,
    default_dtype,
    dropout,
    embedding,
    gather_rows,
    gelu,
    layernorm,
    linear,
    matmul,
    mean,
    mul,
    precision,
    qlinear,
    reshape,
    scale,
    segment_sum,
    softmax_cross_entropy,
    sum,
    transpose,
)

__all__ = [
    "NonFiniteError", "OptimizerState", "QuantizedTensor", "Rng", "Tensor", "add",
    "as_tensor", "causal_softmax", "cross_entropy_rows", "default_dtype", "dequantize",
    "dropout", "embedding", "gather_rows", "gelu", "kernels", "layernorm", "linear",
    "make_optimizer", "matmul", "mean", "memory", "mul", "optimizer_step", "precision",
    "qlinear", "quantize", "reshape", "scale", "segment_sum", "softmax_cross_entropy",
    "sum", "transpose", "zero_grads",
]
