# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Signatures mirror ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from cython cimport floating
from libc.math cimport exp, expf, fabs, floor, sqrt

cnp.import_array()

cdef double GELU_C = 0.7978845608028654


cdef inline floating _tanh(floating u) noexcept nogil:
    # 1 - 2 / (e^{2u} + 1); exact +-1 where tanh already rounds there, which
    # also keeps exp finite as -ffast-math assumes
    if floating is float:
        if u >= <float>9.0:
            return 1.0
        if u <= <float>-9.0:
            return -1.0
        return <float>1.0 - <float>2.0 / (expf(<float>2.0 * u) + <float>1.0)
    if u >= 19.0:
        return 1.0
    if u <= -19.0:
        return -1.0
    return 1.0 - 2.0 / (exp(2.0 * u) + 1.0)


def quantize_blocks(const floating[::1] flat, Py_ssize_t block):
    cdef Py_ssize_t n = flat.shape[0]
    cdef Py_ssize_t nblocks = (n + block - 1) // block
    codes_arr = np.zeros(n, dtype=np.int8)
    scales_arr = np.zeros(nblocks, dtype=np.float32)
    cdef signed char[::1] codes = codes_arr
    cdef float[::1] scales = scales_arr
    cdef Py_ssize_t b, i, lo, hi
    cdef double absmax, v, ratio, c
    for b in range(nblocks):
        lo = b * block
        hi = min(lo + block, n)
        absmax = 0.0
        for i in range(lo, hi):
            v = fabs(<double>flat[i])
            if v > absmax:
                absmax = v
        scales[b] = <float>(absmax / 127.0)
        if absmax == 0.0:
            continue
        for i in range(lo, hi):
            ratio = (<double>flat[i]) * 127.0 / absmax
            c = floor(fabs(ratio) + 0.5)
            if c > 127.0:
                c = 127.0
            codes[i] = <signed char>(c if ratio >= 0 else -c)
    return codes_arr, scales_arr


def dequantize_blocks(const signed char[::1] codes, const float[::1] scales, Py_ssize_t block,
                      dtype=np.float32):
    cdef Py_ssize_t n = codes.shape[0]
    cdef Py_ssize_t b, i, lo, hi, nblocks = scales.shape[0]
    cdef float s32
    cdef double s64
    cdef double[::1] o64
    cdef float[::1] o32
    if np.dtype(dtype) == np.float64:
        out64 = np.empty(n, dtype=np.float64)
        o64 = out64
        for b in range(nblocks):
            lo = b * block
            hi = min(lo + block, n)
            s64 = scales[b]
            for i in range(lo, hi):
                o64[i] = codes[i] * s64
        return out64
    out32 = np.empty(n, dtype=np.float32)
    o32 = out32
    with nogil:
        for b in range(nblocks):
            lo = b * block
            hi = min(lo + block, n)
            s32 = scales[b]
            for i in range(lo, hi):
                o32[i] = codes[i] * s32
    return out32


def layernorm_forward(const floating[:, ::1] x, const floating[::1] gain, const floating[::1] bias,
                      double eps):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    dt = np.float64 if floating is double else np.float32
    y_arr = np.empty((n, d), dtype=dt)
    xhat_arr = np.empty((n, d), dtype=dt)
    rstd_arr = np.empty(n, dtype=dt)
    cdef floating[:, ::1] y = y_arr
    cdef floating[:, ::1] xhat = xhat_arr
    cdef floating[::1] rstd = rstd_arr
    cdef Py_ssize_t i, j
    cdef double mean, var, r, c
    for i in range(n):
        mean = 0.0
        for j in range(d):
            mean += x[i, j]
        mean /= d
        var = 0.0
        for j in range(d):
            c = x[i, j] - mean
            var += c * c
        var /= d
        r = 1.0 / sqrt(var + eps)
        rstd[i] = <floating>r
        for j in range(d):
            c = (x[i, j] - mean) * r
            xhat[i, j] = <floating>c
            y[i, j] = <floating>(c * gain[j] + bias[j])
    return y_arr, xhat_arr, rstd_arr


def layernorm_backward(const floating[:, ::1] gy, const floating[:, ::1] xhat,
                       const floating[::1] rstd, const floating[::1] gain):
    cdef Py_ssize_t n = gy.shape[0], d = gy.shape[1]
    dt = np.float64 if floating is double else np.float32
    dx_arr = np.empty((n, d), dtype=dt)
    dgain64 = np.zeros(d, dtype=np.float64)
    dbias64 = np.zeros(d, dtype=np.float64)
    cdef floating[:, ::1] dx = dx_arr
    cdef double[::1] dg = dgain64
    cdef double[::1] db = dbias64
    cdef Py_ssize_t i, j
    cdef double m1, m2, g
    for i in range(n):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            g = gy[i, j] * gain[j]
            m1 += g
            m2 += g * xhat[i, j]
            dg[j] += gy[i, j] * xhat[i, j]
            db[j] += gy[i, j]
        m1 /= d
        m2 /= d
        for j in range(d):
            g = gy[i, j] * gain[j]
            dx[i, j] = <floating>((g - m1 - xhat[i, j] * m2) * rstd[i])
    return dx_arr, dgain64.astype(dt), dbias64.astype(dt)


def causal_softmax_forward(const floating[:, :, ::1] scores):
    cdef Py_ssize_t n = scores.shape[0], t = scores.shape[1]
    dt = np.float64 if floating is double else np.float32
    out_arr = np.zeros((n, t, t), dtype=dt)
    cdef floating[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, i, j
    cdef double mx, s, e
    for b in range(n):
        for i in range(t):
            mx = scores[b, i, 0]
            for j in range(1, i + 1):
                if scores[b, i, j] > mx:
                    mx = scores[b, i, j]
            s = 0.0
            for j in range(i + 1):
                e = exp(scores[b, i, j] - mx)
                out[b, i, j] = <floating>e
                s += e
            for j in range(i + 1):
                out[b, i, j] = <floating>(out[b, i, j] / s)
    return out_arr


def causal_softmax_backward(const floating[:, :, ::1] gp, const floating[:, :, ::1] probs):
    cdef Py_ssize_t n = gp.shape[0], t = gp.shape[1]
    dt = np.float64 if floating is double else np.float32
    out_arr = np.zeros((n, t, t), dtype=dt)
    cdef floating[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, i, j
    cdef double inner
    for b in range(n):
        for i in range(t):
            inner = 0.0
            for j in range(i + 1):
                inner += gp[b, i, j] * probs[b, i, j]
            for j in range(i + 1):
                out[b, i, j] = <floating>(probs[b, i, j] * (gp[b, i, j] - inner))
    return out_arr


def gelu_forward(const floating[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    dt = np.float64 if floating is double else np.float32
    out_arr = np.empty(n, dtype=dt)
    cdef floating[::1] out = out_arr
    cdef floating v, c = <floating>GELU_C, k = <floating>0.044715
    with nogil:
        for i in range(n):
            v = x[i]
            out[i] = <floating>0.5 * v * (<floating>1.0 + _tanh(c * (v + k * v * v * v)))
    return out_arr


def gelu_backward(const floating[::1] gy, const floating[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    dt = np.float64 if floating is double else np.float32
    out_arr = np.empty(n, dtype=dt)
    cdef floating[::1] out = out_arr
    cdef floating v, th, c = <floating>GELU_C, k = <floating>0.044715
    with nogil:
        for i in range(n):
            v = x[i]
            th = _tanh(c * (v + k * v * v * v))
            out[i] = gy[i] * (<floating>0.5 * (<floating>1.0 + th)
                     + <floating>0.5 * v * (<floating>1.0 - th * th) * c * (<floating>1.0 + 3 * k * v * v))
    return out_arr
