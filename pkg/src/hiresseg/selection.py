"""Mask selection: SEG projector, fusion blocks, sim/IoP heads, and selection strategies."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError, ShapeError
from .layers import (
    attention,
    attention_backward,
    layer_norm,
    layer_norm_backward,
    linear,
    linear_backward,
    relu,
    relu_backward,
    sigmoid,
)

DEFAULT_K_TOP = 10
DEFAULT_THRESHOLD = 0.7
DEFAULT_SEG_DIM = 256


@dataclass
class SelectionHeads:
    """All trainable parameters of the selection side, kept in one flat name -> array dict.

    Layout (``d`` = mask feature dim, ``seg_dim`` = raw SEG embedding dim)::

        proj.{w1,b1,w2,b2}            seg_dim -> d -> d, ReLU in between
        fusion.{i}.self.{wq,wk,wv}    self-attention over mask rows
        fusion.{i}.cross.{wq,wk,wv}   mask rows attend to the projected SEG vector
        sim.{w1,b1,w2,b2}             d -> d -> d
        iop.{w1,b1,w2,b2}             d -> d -> 1, logistic on top
    """

    dim: int
    seg_dim: int
    n_blocks: int = 2
    ln_eps: float = 1e-5
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        expected = self.shapes()
        if not self.params:
            self.params = {k: np.zeros(s) for k, s in expected.items()}
        if set(self.params) != set(expected):
            missing = sorted(set(expected) - set(self.params))
            extra = sorted(set(self.params) - set(expected))
            raise ConfigError(f"head parameters mismatch: missing {missing}, unexpected {extra}")
        for k, s in expected.items():
            arr = np.asarray(self.params[k], dtype=np.float64)
            if arr.shape != s:
                raise ShapeError(f"{k} must have shape {s}, got {arr.shape}")
            if not np.isfinite(arr).all():
                raise ConfigError(f"{k} has non-finite entries")
            self.params[k] = arr

    def shapes(self) -> dict[str, tuple[int, ...]]:
        d, e = self.dim, self.seg_dim
        s: dict[str, tuple[int, ...]] = {
            "proj.w1": (e, d), "proj.b1": (d,), "proj.w2": (d, d), "proj.b2": (d,),
        }
        for i in range(self.n_blocks):
            for kind in ("self", "cross"):
                for w in ("wq", "wk", "wv"):
                    s[f"fusion.{i}.{kind}.{w}"] = (d, d)
        s.update({
            "sim.w1": (d, d), "sim.b1": (d,), "sim.w2": (d, d), "sim.b2": (d,),
            "iop.w1": (d, d), "iop.b1": (d,), "iop.w2": (d, 1), "iop.b2": (1,),
        })
        return s

    @classmethod
    def init(cls, dim: int, seg_dim: int, seed: int, n_blocks: int = 2) -> "SelectionHeads":
        """LeCun-normal weights, zero biases."""
        rng = np.random.default_rng(seed)
        heads = cls(dim, seg_dim, n_blocks)
        for k, shape in heads.shapes().items():
            if len(shape) == 2:
                heads.params[k] = rng.normal(0.0, 1.0 / np.sqrt(shape[0]), size=shape)
        return heads

    def copy(self) -> "SelectionHeads":
        return SelectionHeads(self.dim, self.seg_dim, self.n_blocks, self.ln_eps,
                              {k: v.copy() for k, v in self.params.items()})


def _mlp(x, p, prefix):
    h, c1 = linear(x, p[f"{prefix}.w1"], p[f"{prefix}.b1"])
    a, mask = relu(h)
    out, c2 = linear(a, p[f"{prefix}.w2"], p[f"{prefix}.b2"])
    return out, (c1, mask, c2)


def _mlp_backward(dout, cache, prefix, grads):
    c1, mask, c2 = cache
    da, grads[f"{prefix}.w2"], grads[f"{prefix}.b2"] = linear_backward(dout, c2)
    dh = relu_backward(da, mask)
    dx, grads[f"{prefix}.w1"], grads[f"{prefix}.b1"] = linear_backward(dh, c1)
    return dx


def project_seg(raw: np.ndarray, heads: SelectionHeads) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != (heads.seg_dim,):
        raise ShapeError(f"SEG embedding must be [{heads.seg_dim}], got {raw.shape}")
    return _mlp(raw, heads.params, "proj")[0].astype(np.float32)


def forward(m_hre: np.ndarray, seg_raw: np.ndarray, heads: SelectionHeads):
    """Float64 forward. Returns ``(s_sim [K], s_iop [K], cache)``; the cache feeds ``backward``."""
    p = heads.params
    m = np.asarray(m_hre, dtype=np.float64)
    raw = np.asarray(seg_raw, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] != heads.dim:
        raise ShapeError(f"mask features must be [K>=1, {heads.dim}], got {m.shape}")
    if raw.shape != (heads.seg_dim,):
        raise ShapeError(f"SEG embedding must be [{heads.seg_dim}], got {raw.shape}")

    y, proj_cache = _mlp(raw, p, "proj")
    x = m
    blocks = []
    for i in range(heads.n_blocks):
        pre = f"fusion.{i}"
        sa, sa_c = attention(x, x, p[f"{pre}.self.wq"], p[f"{pre}.self.wk"], p[f"{pre}.self.wv"])
        x, ln1 = layer_norm(x + sa, heads.ln_eps)
        ca, ca_c = attention(x, y[None, :], p[f"{pre}.cross.wq"], p[f"{pre}.cross.wk"], p[f"{pre}.cross.wv"])
        x, ln2 = layer_norm(x + ca, heads.ln_eps)
        blocks.append((sa_c, ln1, ca_c, ln2))

    hs, sim_cache = _mlp(x, p, "sim")
    s_sim = hs @ y
    z, iop_cache = _mlp(x, p, "iop")
    s_iop = sigmoid(z[:, 0])
    cache = (y, proj_cache, blocks, hs, sim_cache, iop_cache, s_iop)
    return s_sim, s_iop, cache


def backward(ds_sim: np.ndarray, ds_iop: np.ndarray, cache, heads: SelectionHeads) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every head parameter, given dL/ds_sim and dL/ds_iop."""
    y, proj_cache, blocks, hs, sim_cache, iop_cache, s_iop = cache
    grads: dict[str, np.ndarray] = {}

    dy = hs.T @ ds_sim
    dx = _mlp_backward(np.outer(ds_sim, y), sim_cache, "sim", grads)
    dz = (ds_iop * s_iop * (1.0 - s_iop))[:, None]
    dx = dx + _mlp_backward(dz, iop_cache, "iop", grads)

    for i in reversed(range(heads.n_blocks)):
        pre = f"fusion.{i}"
        sa_c, ln1, ca_c, ln2 = blocks[i]
        dres = layer_norm_backward(dx, ln2)
        dxq, dkv, *dw = attention_backward(dres, ca_c)
        for name, g in zip(("wq", "wk", "wv"), dw):
            grads[f"{pre}.cross.{name}"] = g
        dy = dy + dkv[0]
        dx = dres + dxq
        dres = layer_norm_backward(dx, ln1)
        dxq, dkv, *dw = attention_backward(dres, sa_c)
        for name, g in zip(("wq", "wk", "wv"), dw):
            grads[f"{pre}.self.{name}"] = g
        dx = dres + dxq + dkv

    _mlp_backward(dy, proj_cache, "proj", grads)
    return grads


def activation_pattern(cache) -> np.ndarray:
    """All ReLU on/off flags of a forward pass, flattened; used to detect kink crossings."""
    _, proj_cache, _, _, sim_cache, iop_cache, _ = cache
    return np.concatenate([c[1].ravel() for c in (proj_cache, sim_cache, iop_cache)])


def score(m_hre: np.ndarray, seg_raw: np.ndarray, heads: SelectionHeads) -> tuple[np.ndarray, np.ndarray]:
    """(S_sim, S_iop) for each of the K mask features, as float32."""
    s_sim, s_iop, _ = forward(m_hre, seg_raw, heads)
    return s_sim.astype(np.float32), s_iop.astype(np.float32)


class Strategy(str, Enum):
    TOP1_SIM = "Top1Sim"
    TOP1_IOP = "Top1Iop"
    IOP_THRESHOLD = "IopThreshold"
    TOPK_SIM = "TopKSim"
    TOPK_SIM_AND_IOP_THRESHOLD = "TopKSimAndIopThreshold"


DEFAULT_STRATEGY = Strategy.TOPK_SIM_AND_IOP_THRESHOLD


@dataclass(frozen=True)
class SelectionOutcome:
    s_sim: np.ndarray
    s_iop: np.ndarray
    chosen: tuple[int, ...]
    final_mask: np.ndarray


def _argmax(v: np.ndarray) -> int:
    return int(np.argmax(v))  # first occurrence wins ties


def top_k(v: np.ndarray, k: int) -> list[int]:
    """Indices of the k largest entries; equal values keep the lower index first."""
    order = np.argsort(-np.asarray(v, dtype=np.float64), kind="stable")
    return sorted(int(i) for i in order[:k])


def select(
    s_sim: np.ndarray,
    s_iop: np.ndarray,
    masks: np.ndarray,
    strategy: Strategy | str = DEFAULT_STRATEGY,
    k_top: int = DEFAULT_K_TOP,
    threshold: float = DEFAULT_THRESHOLD,
) -> SelectionOutcome:
    strategy = Strategy(strategy)
    if int(k_top) != k_top or k_top < 1:
        raise ConfigError(f"k_top must be an integer >= 1, got {k_top}")
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError(f"threshold must lie in [0, 1], got {threshold}")
    s_sim = np.asarray(s_sim)
    s_iop = np.asarray(s_iop)
    masks = np.asarray(masks)
    if not (s_sim.shape == s_iop.shape == (masks.shape[0],)) or masks.shape[0] < 1:
        raise ShapeError(
            f"need equal-length score vectors matching K masks: {s_sim.shape}, {s_iop.shape}, {masks.shape}"
        )

    if strategy is Strategy.TOP1_SIM:
        chosen = [_argmax(s_sim)]
    elif strategy is Strategy.TOP1_IOP:
        chosen = [_argmax(s_iop)]
    elif strategy is Strategy.IOP_THRESHOLD:
        chosen = np.flatnonzero(s_iop >= threshold).tolist() or [_argmax(s_iop)]
    elif strategy is Strategy.TOPK_SIM:
        chosen = top_k(s_sim, int(k_top))
    else:
        above = set(np.flatnonzero(s_iop >= threshold).tolist())
        chosen = [i for i in top_k(s_sim, int(k_top)) if i in above] or [_argmax(s_sim)]

    final = np.any(masks[chosen] != 0, axis=0).astype(np.uint8)
    return SelectionOutcome(s_sim, s_iop, tuple(chosen), final)
