"""High-resolution enhancement: L blocks of mask-to-hybrid cross-attention + residual + LayerNorm."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, ShapeError
from .hrp import AttentionParams
from .layers import attention, layer_norm

DEFAULT_LAYERS = 2


@dataclass(frozen=True)
class HreParams:
    layers: list[AttentionParams] = field(default_factory=list)
    ln_eps: float = 1e-5

    def __post_init__(self):
        if len(self.layers) < 1:
            raise ConfigError("HRE needs at least one layer")
        dims = {p.dim for p in self.layers}
        if len(dims) != 1:
            raise ShapeError(f"all HRE layers must share d, got {sorted(dims)}")

    @property
    def dim(self) -> int:
        return self.layers[0].dim

    @classmethod
    def random(cls, d: int, n_layers: int, rng: np.random.Generator, ln_eps: float = 1e-5) -> "HreParams":
        return cls([AttentionParams.random(d, rng) for _ in range(n_layers)], ln_eps)


def hre_forward(m: np.ndarray, hybrid: np.ndarray, p: HreParams, return_weights: bool = False):
    """Enhance mask features [K, d] against hybrid features [n_g, n_g, d].

    With ``return_weights`` also returns the per-layer softmax weights, each [K, N_g].
    """
    if m.ndim != 2 or m.shape[0] < 1:
        raise ShapeError(f"mask features must be [K>=1, d], got {m.shape}")
    d = m.shape[1]
    if d != p.dim or hybrid.shape[-1] != d:
        raise ShapeError(f"dimension mismatch: masks d={d}, params d={p.dim}, hybrid d={hybrid.shape[-1]}")
    keys = hybrid.reshape(-1, d).astype(np.float64)
    x = m.astype(np.float64)
    weights = []
    for layer in p.layers:
        wq, wk, wv = (w.astype(np.float64) for w in (layer.w_q, layer.w_k, layer.w_v))
        attn, cache = attention(x, keys, wq, wk, wv)
        weights.append(cache[8])
        x, _ = layer_norm(x + attn, p.ln_eps)
    if not np.isfinite(x).all():
        raise NumericError("HRE produced non-finite values")
    out = x.astype(np.float32)
    return (out, weights) if return_weights else out


def init_perception(d: int, n_layers: int = DEFAULT_LAYERS, seed: int = 0):
    """Seeded (region-attention params, HRE params) pair used by dataset synthesis and runs."""
    rng = np.random.default_rng([seed, 0x4852])
    return AttentionParams.random(d, rng), HreParams.random(d, n_layers, rng)
