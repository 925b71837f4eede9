"""High-resolution perception: region attention, global/region fusion, mask pooling."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .encoder import FeatureMaps
from .errors import ConfigError, DegenerateMaskError, NumericError, ShapeError
from .geometry import region_blocks
from .layers import attention

DEFAULT_GAMMA = 0.8


class PoolSource(str, Enum):
    HYBRID = "hybrid"
    REGION = "region"


@dataclass(frozen=True)
class AttentionParams:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray

    def __post_init__(self):
        d = self.w_q.shape[0]
        for name in ("w_q", "w_k", "w_v"):
            w = getattr(self, name)
            if w.shape != (d, d):
                raise ShapeError(f"{name} must be square [{d}, {d}], got {w.shape}")
            if not np.isfinite(w).all():
                raise NumericError(f"{name} has non-finite entries")

    @property
    def dim(self) -> int:
        return self.w_q.shape[0]

    @classmethod
    def identity(cls, d: int) -> "AttentionParams":
        eye = np.eye(d, dtype=np.float32)
        return cls(eye, eye.copy(), eye.copy())

    @classmethod
    def random(cls, d: int, rng: np.random.Generator) -> "AttentionParams":
        ws = rng.normal(0.0, 1.0 / np.sqrt(d), size=(3, d, d)).astype(np.float32)
        return cls(ws[0], ws[1], ws[2])


@dataclass(frozen=True)
class HybridFeatures:
    f_region: np.ndarray  # [n_g, n_g, d]
    f_hybrid: np.ndarray  # [n_g, n_g, d]
    gamma: float


def _f64(p: AttentionParams):
    return p.w_q.astype(np.float64), p.w_k.astype(np.float64), p.w_v.astype(np.float64)


def region_attention(fm: FeatureMaps, p: AttentionParams, return_weights: bool = False):
    """Each global token attends over its own N x N block of local tokens.

    Returns F_r as float32 [n_g, n_g, d]; with ``return_weights`` also the
    softmax weights [n_g, n_g, N*N].
    """
    if p.dim != fm.cfg.dim:
        raise ShapeError(f"attention params have d={p.dim}, features have d={fm.cfg.dim}")
    g = fm.f_global.astype(np.float64)[:, :, None, :]
    blocks = region_blocks(fm.f_local.astype(np.float64), fm.cfg.mag)
    out, cache = attention(g, blocks, *_f64(p))
    f_region = out[:, :, 0, :].astype(np.float32)
    if not np.isfinite(f_region).all():
        raise NumericError("region attention produced non-finite values")
    if return_weights:
        return f_region, cache[8][:, :, 0, :]
    return f_region


def fuse(f_global: np.ndarray, f_region: np.ndarray, gamma: float) -> np.ndarray:
    if not 0.0 <= gamma <= 1.0:
        raise ConfigError(f"gamma must lie in [0, 1], got {gamma}")
    if f_global.shape != f_region.shape:
        raise ShapeError(f"shape mismatch {f_global.shape} vs {f_region.shape}")
    mixed = gamma * f_global.astype(np.float64) + (1.0 - gamma) * f_region.astype(np.float64)
    return mixed.astype(np.float32)


def check_masks(masks: np.ndarray, side: int | None = None) -> np.ndarray:
    masks = np.asarray(masks)
    if masks.dtype != np.uint8:
        raise ConfigError(f"masks must be uint8, got {masks.dtype}")
    if masks.ndim != 3:
        raise ShapeError(f"masks must be [K, n, n], got shape {masks.shape}")
    if side is not None and masks.shape[1:] != (side, side):
        raise ShapeError(f"masks must live on the {side}x{side} token grid, got {masks.shape[1:]}")
    if masks.size and masks.max() > 1:
        raise ConfigError("mask values must be 0 or 1")
    return masks


def mask_pool(masks: np.ndarray, feats: np.ndarray) -> np.ndarray:
    """Masked mean of token features: row k = sum_{t in m_k} F[t] / |m_k|."""
    masks = check_masks(masks, feats.shape[0])
    flat = masks.reshape(masks.shape[0], -1).astype(np.float64)
    counts = flat.sum(axis=1)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise DegenerateMaskError(f"proposals {empty.tolist()} have no active token; drop them first")
    f = feats.reshape(-1, feats.shape[-1]).astype(np.float64)
    return ((flat @ f) / counts[:, None]).astype(np.float32)


def drop_empty(masks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Remove proposals without active tokens. Returns (kept masks, kept original indices)."""
    keep = np.flatnonzero(masks.reshape(masks.shape[0], -1).any(axis=1))
    return masks[keep], keep


def downsample_mask(mask: np.ndarray, side: int) -> np.ndarray:
    """Pixel mask(s) [..., H, W] -> token grid [..., side, side]; a token is on at >= 50% coverage."""
    mask = np.asarray(mask)
    h, w = mask.shape[-2:]
    if h % side or w % side:
        raise ShapeError(f"mask of size {h}x{w} does not tile into a {side}x{side} grid")
    ph, pw = h // side, w // side
    blocks = (mask != 0).reshape(mask.shape[:-2] + (side, ph, side, pw))
    on = blocks.sum(axis=(-3, -1))
    return (2 * on >= ph * pw).astype(np.uint8)


def hrp_forward(
    fm: FeatureMaps,
    masks: np.ndarray,
    p: AttentionParams,
    gamma: float = DEFAULT_GAMMA,
    source: PoolSource | str = PoolSource.HYBRID,
) -> tuple[HybridFeatures, np.ndarray]:
    source = PoolSource(source)
    f_region = region_attention(fm, p)
    f_hybrid = fuse(fm.f_global, f_region, gamma)
    pooled = mask_pool(masks, f_hybrid if source is PoolSource.HYBRID else f_region)
    return HybridFeatures(f_region, f_hybrid, float(gamma)), pooled
