"""NumPy building blocks with hand-written backward passes.

Forward functions return ``(out, cache)``; the matching ``*_backward`` takes the
upstream gradient and the cache. Everything computes in float64. Leading batch
dimensions are supported by the attention and layer-norm kernels.
"""
from __future__ import annotations

import numpy as np


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    return z - np.log(np.exp(z).sum())


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def attention(xq, xkv, wq, wk, wv):
    """Single-head scaled dot-product attention, no bias, no output projection.

    xq: [..., Q, d], xkv: [..., S, d]; returns out [..., Q, d].
    """
    d = wq.shape[1]
    q = xq @ wq
    k = xkv @ wk
    v = xkv @ wv
    scale = 1.0 / np.sqrt(d)
    a = softmax((q @ np.swapaxes(k, -1, -2)) * scale)
    out = a @ v
    return out, (xq, xkv, wq, wk, wv, q, k, v, a, scale)


def attention_backward(dout, cache):
    xq, xkv, wq, wk, wv, q, k, v, a, scale = cache
    da = dout @ np.swapaxes(v, -1, -2)
    dv = np.swapaxes(a, -1, -2) @ dout
    ds = a * (da - (da * a).sum(axis=-1, keepdims=True))
    dq = (ds @ k) * scale
    dk = (np.swapaxes(ds, -1, -2) @ q) * scale
    dxq = dq @ wq.T
    dxkv = dk @ wk.T + dv @ wv.T
    dwq = _outer_sum(xq, dq)
    dwk = _outer_sum(xkv, dk)
    dwv = _outer_sum(xkv, dv)
    return dxq, dxkv, dwq, dwk, dwv


def _outer_sum(x, g):
    d_in, d_out = x.shape[-1], g.shape[-1]
    return x.reshape(-1, d_in).T @ g.reshape(-1, d_out)


def layer_norm(x, eps: float = 1e-5):
    """Parameter-free layer norm over the last axis (population variance)."""
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat, (xhat, inv)


def layer_norm_backward(dout, cache):
    xhat, inv = cache
    return inv * (
        dout
        - dout.mean(axis=-1, keepdims=True)
        - xhat * (dout * xhat).mean(axis=-1, keepdims=True)
    )


def linear(x, w, b):
    return x @ w + b, (x, w)


def linear_backward(dout, cache):
    x, w = cache
    dx = dout @ w.T
    if x.ndim == 1:
        dw = np.outer(x, dout)
        db = dout
    else:
        dw = x.T @ dout
        db = dout.sum(axis=0)
    return dx, dw, db


def relu(x):
    return np.maximum(x, 0.0), x > 0


def relu_backward(dout, mask):
    return dout * mask
