"""Pure NumPy implementations of the hot kernels.

Every function here has a compiled twin in ``_ckernels.pyx`` with the same
signature. The two must agree to float rounding; integer outputs
(quantization codes) must agree exactly.
"""
from __future__ import annotations

import numpy as np

GELU_C = 0.7978845608028654  # sqrt(2/pi)


def quantize_blocks(flat, block):
    flat = np.ascontiguousarray(flat)
    n = flat.shape[0]
    nblocks = (n + block - 1) // block
    padded = np.zeros(nblocks * block, dtype=np.float64)
    padded[:n] = flat
    padded = padded.reshape(nblocks, block)
    absmax = np.abs(padded).max(axis=1)
    safe = np.where(absmax > 0, absmax, 1.0)
    ratio = padded * 127.0 / safe[:, None]
    codes = np.sign(ratio) * np.floor(np.abs(ratio) + 0.5)
    codes = np.clip(codes, -127, 127).astype(np.int8).reshape(-1)[:n]
    scales = (absmax / 127.0).astype(np.float32)
    return codes, scales


def dequantize_blocks(codes, scales, block, dtype=np.float32):
    n = codes.shape[0]
    per_elem = np.repeat(scales.astype(dtype), block)[:n]
    return codes.astype(dtype) * per_elem


def layernorm_forward(x, gain, bias, eps):
    mean = x.mean(axis=1, keepdims=True)
    xc = x - mean
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gain + bias, xhat, rstd.reshape(-1)


def layernorm_backward(gy, xhat, rstd, gain):
    dgain = (gy * xhat).sum(axis=0)
    dbias = gy.sum(axis=0)
    gxhat = gy * gain
    dx = (gxhat - gxhat.mean(axis=1, keepdims=True)
          - xhat * (gxhat * xhat).mean(axis=1, keepdims=True)) * rstd[:, None]
    return dx, dgain, dbias


def causal_softmax_forward(scores):
    t = scores.shape[-1]
    mask = np.triu(np.ones((t, t), dtype=bool), k=1)
    s = np.where(mask, -np.inf, scores)
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def causal_softmax_backward(gp, probs):
    inner = (gp * probs).sum(axis=-1, keepdims=True)
    return probs * (gp - inner)


def gelu_forward(x):
    inner = GELU_C * (x + 0.044715 * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(inner))


def gelu_backward(gy, x):
    inner = GELU_C * (x + 0.044715 * x * x * x)
    th = np.tanh(inner)
    dinner = GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return gy * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner)
