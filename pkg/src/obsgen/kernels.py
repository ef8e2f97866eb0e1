"""Hot numeric kernels: numba-compiled inner loops with a pure-numpy fallback.

The active implementation is picked once at import time. Setting the
environment variable ``OBSGEN_DISABLE_NUMBA=1`` (or numba being absent)
selects the numpy path. Both variants stay importable under ``*_numpy`` /
``*_numba`` names so parity tests and ``benchmarks/bench_kernels.py`` can
compare them directly.

All kernels operate on contiguous float64 arrays. The numba loops accumulate
left to right, numpy uses pairwise summation, so cross-path results agree to
~1e-15 relative, not bit-for-bit; within one path results are deterministic.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("OBSGEN_DISABLE_NUMBA", "") not in ("", "0")

try:
    from numba import njit

    _HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    _HAS_NUMBA = False

NUMBA_ACTIVE = _HAS_NUMBA and not _DISABLED


# ---------------------------------------------------------------------------
# numpy reference implementations
# ---------------------------------------------------------------------------


def softmax_rows_numpy(x: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax of a 2D array."""
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_grad_numpy(probs: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    """Backward of row softmax: dx = p * (dp - sum(p * dp))."""
    dot = (probs * dprobs).sum(axis=1, keepdims=True)
    return probs * (dprobs - dot)


def layer_norm_rows_numpy(x, gain, bias, eps):
    """Per-row standardization then affine. Returns (out, xhat, inv_std)."""
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv_std
    return xhat * gain + bias, xhat, inv_std[:, 0]


def layer_norm_rows_grad_numpy(dout, xhat, inv_std, gain):
    """Backward of layer_norm_rows. Returns (dx, dgain, dbias)."""
    n = xhat.shape[1]
    dxhat = dout * gain
    s1 = dxhat.sum(axis=1, keepdims=True)
    s2 = (dxhat * xhat).sum(axis=1, keepdims=True)
    dx = (inv_std[:, None] / n) * (n * dxhat - s1 - xhat * s2)
    dgain = (dout * xhat).sum(axis=0)
    dbias = dout.sum(axis=0)
    return dx, dgain, dbias


def adamw_update_numpy(param, grad, m, v, lr, beta1, beta2, eps, weight_decay, bc1, bc2):
    """One decoupled-weight-decay adaptive update, in place.

    bc1/bc2 are the bias corrections 1 - beta^t, precomputed by the caller.
    """
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    param -= lr * weight_decay * param
    param -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# ---------------------------------------------------------------------------
# numba variants (same math, explicit loops)
# ---------------------------------------------------------------------------


def _softmax_rows_loop(x):
    rows, cols = x.shape
    out = np.empty((rows, cols))
    for i in range(rows):
        m = x[i, 0]
        for j in range(1, cols):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(cols):
            out[i, j] = np.exp(x[i, j] - m)
            s += out[i, j]
        for j in range(cols):
            out[i, j] /= s
    return out


def _softmax_rows_grad_loop(probs, dprobs):
    rows, cols = probs.shape
    dx = np.empty((rows, cols))
    for i in range(rows):
        dot = 0.0
        for j in range(cols):
            dot += probs[i, j] * dprobs[i, j]
        for j in range(cols):
            dx[i, j] = probs[i, j] * (dprobs[i, j] - dot)
    return dx


def _layer_norm_rows_loop(x, gain, bias, eps):
    rows, cols = x.shape
    out = np.empty((rows, cols))
    xhat = np.empty((rows, cols))
    inv_std = np.empty(rows)
    for i in range(rows):
        mu = 0.0
        for j in range(cols):
            mu += x[i, j]
        mu /= cols
        var = 0.0
        for j in range(cols):
            d = x[i, j] - mu
            var += d * d
        var /= cols
        inv = 1.0 / np.sqrt(var + eps)
        inv_std[i] = inv
        for j in range(cols):
            xhat[i, j] = (x[i, j] - mu) * inv
            out[i, j] = xhat[i, j] * gain[j] + bias[j]
    return out, xhat, inv_std


def _layer_norm_rows_grad_loop(dout, xhat, inv_std, gain):
    rows, cols = xhat.shape
    dx = np.empty((rows, cols))
    dgain = np.zeros(cols)
    dbias = np.zeros(cols)
    for i in range(rows):
        s1 = 0.0
        s2 = 0.0
        for j in range(cols):
            dxh = dout[i, j] * gain[j]
            s1 += dxh
            s2 += dxh * xhat[i, j]
            dgain[j] += dout[i, j] * xhat[i, j]
            dbias[j] += dout[i, j]
        k = inv_std[i] / cols
        for j in range(cols):
            dxh = dout[i, j] * gain[j]
            dx[i, j] = k * (cols * dxh - s1 - xhat[i, j] * s2)
    return dx, dgain, dbias


def _adamw_update_loop(param, grad, m, v, lr, beta1, beta2, eps, weight_decay, bc1, bc2):
    flat_p = param.ravel()
    flat_g = grad.ravel()
    flat_m = m.ravel()
    flat_v = v.ravel()
    for i in range(flat_p.size):
        flat_m[i] = beta1 * flat_m[i] + (1.0 - beta1) * flat_g[i]
        flat_v[i] = beta2 * flat_v[i] + (1.0 - beta2) * flat_g[i] * flat_g[i]
        flat_p[i] -= lr * weight_decay * flat_p[i]
        flat_p[i] -= lr * (flat_m[i] / bc1) / (np.sqrt(flat_v[i] / bc2) + eps)


if _HAS_NUMBA:
    softmax_rows_numba = njit(cache=True)(_softmax_rows_loop)
    softmax_rows_grad_numba = njit(cache=True)(_softmax_rows_grad_loop)
    layer_norm_rows_numba = njit(cache=True)(_layer_norm_rows_loop)
    layer_norm_rows_grad_numba = njit(cache=True)(_layer_norm_rows_grad_loop)
    adamw_update_numba = njit(cache=True)(_adamw_update_loop)
else:  # pragma: no cover
    softmax_rows_numba = None
    softmax_rows_grad_numba = None
    layer_norm_rows_numba = None
    layer_norm_rows_grad_numba = None
    adamw_update_numba = None


if NUMBA_ACTIVE:
    softmax_rows = softmax_rows_numba
    softmax_rows_grad = softmax_rows_grad_numba
    layer_norm_rows = layer_norm_rows_numba
    layer_norm_rows_grad = layer_norm_rows_grad_numba
    adamw_update = adamw_update_numba
else:
    softmax_rows = softmax_rows_numpy
    softmax_rows_grad = softmax_rows_grad_numpy
    layer_norm_rows = layer_norm_rows_numpy
    layer_norm_rows_grad = layer_norm_rows_grad_numpy
    adamw_update = adamw_update_numpy


def warmup() -> None:
    """Trigger JIT compilation on tiny inputs so timings exclude compile cost."""
    x = np.array([[0.1, 0.2], [0.3, 0.4]])
    g = np.ones(2)
    p = softmax_rows(x)
    softmax_rows_grad(p, x)
    out, xhat, inv = layer_norm_rows(x, g, np.zeros(2), 1e-5)
    layer_norm_rows_grad(out, xhat, inv, g)
    adamw_update(x.copy(), x, np.zeros_like(x), np.zeros_like(x),
                 1e-3, 0.9, 0.999, 1e-8, 0.0, 0.1, 0.001)
