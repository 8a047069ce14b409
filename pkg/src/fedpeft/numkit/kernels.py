"""Hot-kernel dispatch.

The compiled module ``_ckernels`` is used when it imports and the
``FEDPEFT_PURE_PYTHON`` environment variable is unset or ``0``; otherwise
the NumPy fallback in ``_kernels_py`` is used. The choice is made once, at
import. ``use_backend`` switches it explicitly (benchmarks, tests).
"""
from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _kernels_py}
if _ckernels is not None:
    _BACKENDS["compiled"] = _ckernels

_impl = _kernels_py
BACKEND = "python"


def available_backends():
    return sorted(_BACKENDS)


def use_backend(name):
    """Select ``"compiled"`` or ``"python"``; returns the previous name."""
    global _impl, BACKEND
    if name not in _BACKENDS:
        raise ValueError(f"kernel backend {name!r} unavailable; have {available_backends()}")
    prev = BACKEND
    _impl = _BACKENDS[name]
    BACKEND = name
    return prev


if _ckernels is not None and os.environ.get("FEDPEFT_PURE_PYTHON", "0") in ("", "0"):
    use_backend("compiled")


def _c(a):
    return np.ascontiguousarray(a)


def quantize_blocks(flat, block):
    """Blockwise absmax int8 codes and float32 per-block scales."""
    return _impl.quantize_blocks(_c(flat.reshape(-1)), int(block))


def dequantize_blocks(codes, scales, block, dtype=np.float32):
    return _impl.dequantize_blocks(_c(codes), _c(scales.astype(np.float32, copy=False)),
                                   int(block), dtype)


def layernorm_forward(x2d, gain, bias, eps):
    dt = x2d.dtype
    return _impl.layernorm_forward(_c(x2d), _c(gain.astype(dt, copy=False)),
                                   _c(bias.astype(dt, copy=False)), float(eps))


def layernorm_backward(gy, xhat, rstd, gain):
    dt = xhat.dtype
    return _impl.layernorm_backward(_c(gy.astype(dt, copy=False)), _c(xhat), _c(rstd),
                                    _c(gain.astype(dt, copy=False)))


def causal_softmax_forward(scores):
    shape = scores.shape
    t = shape[-1]
    out = _impl.causal_softmax_forward(_c(scores.reshape(-1, t, t)))
    return out.reshape(shape)


def causal_softmax_backward(gp, probs):
    shape = probs.shape
    t = shape[-1]
    out = _impl.causal_softmax_backward(_c(gp.astype(probs.dtype, copy=False).reshape(-1, t, t)),
                                        _c(probs.reshape(-1, t, t)))
    return out.reshape(shape)


def gelu_forward(x):
    return _impl.gelu_forward(_c(x.reshape(-1))).reshape(x.shape)


def gelu_backward(gy, x):
    return _impl.gelu_backward(_c(gy.astype(x.dtype, copy=False).reshape(-1)),
                               _c(x.reshape(-1))).reshape(x.shape)
