"""Feature producers: a seeded pseudo-encoder and HRTF ingestion of external features."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DTypeError, NumericError
from .geometry import GridConfig, assemble_tiles
from .tensor_io import read_tensor

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """splitmix64 stream; kept dependency-free so the projection is reproducible anywhere."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def uniform(self) -> float:
        """Uniform on [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def normals(self, count: int) -> list[float]:
        # Box-Muller; both outputs of every pair are used, u1 shifted into (0, 1]
        out: list[float] = []
        while len(out) < count:
            u1 = 1.0 - self.uniform()
            u2 = self.uniform()
            r = math.sqrt(-2.0 * math.log(u1))
            out.append(r * math.cos(2.0 * math.pi * u2))
            out.append(r * math.sin(2.0 * math.pi * u2))
        return out[:count]


N_INPUTS = 5  # mean R, G, B, row / n, col / n


def projection_matrix(dim: int, seed: int) -> np.ndarray:
    """The d x 5 projection, row-major fill from the seeded normal stream (float64)."""
    return np.array(SplitMix64(seed).normals(dim * N_INPUTS), dtype=np.float64).reshape(dim, N_INPUTS)


@dataclass(frozen=True)
class FeatureMaps:
    f_global: np.ndarray  # [n_g, n_g, d] float32
    f_local: np.ndarray  # [n_l, n_l, d] float32
    cfg: GridConfig

    def __post_init__(self):
        check_feature_shapes(self.f_global, self.f_local, self.cfg)
        if not (np.isfinite(self.f_global).all() and np.isfinite(self.f_local).all()):
            raise NumericError("feature maps contain non-finite values")


def check_feature_shapes(f_global: np.ndarray, f_local: np.ndarray, cfg: GridConfig) -> None:
    for name, arr in (("global", f_global), ("local", f_local)):
        if arr.dtype != np.float32:
            raise DTypeError(f"{name} features must be float32, got {arr.dtype}")
        if arr.ndim != 3:
            raise ConfigError(f"{name} features must be [side, side, d], got shape {arr.shape}")
    n_g, n_l, d = cfg.token_side, cfg.local_side, cfg.dim
    if f_global.shape[0] != n_g or f_global.shape[1] != n_g:
        raise ConfigError(f"global token side is {f_global.shape[:2]}, expected n_g={n_g}")
    if f_local.shape[0] != n_l or f_local.shape[1] != n_l:
        raise ConfigError(
            f"local token side is {f_local.shape[:2]}, expected n_l = mag * n_g = {n_l}"
        )
    if f_global.shape[2] != d:
        raise ConfigError(f"global channel dim d is {f_global.shape[2]}, expected {d}")
    if f_local.shape[2] != d:
        raise ConfigError(f"local channel dim d is {f_local.shape[2]}, expected {d}")


def _encode_view(view: np.ndarray, n: int, w_p: np.ndarray) -> np.ndarray:
    side = view.shape[0]
    p = side // n
    rgb = view.astype(np.float64).reshape(n, p, n, p, 3).mean(axis=(1, 3)) / 255.0
    pos = np.arange(n, dtype=np.float64) / n
    inputs = np.empty((n, n, N_INPUTS))
    inputs[..., :3] = rgb
    inputs[..., 3] = pos[:, None]
    inputs[..., 4] = pos[None, :]
    return inputs @ w_p.T


def pseudo_encode(global_image: np.ndarray, tiles: np.ndarray, cfg: GridConfig, seed: int) -> FeatureMaps:
    """Deterministic stand-in for a ViT: token = W_p @ [patch mean RGB, row/n, col/n].

    Each tile is encoded on its own (positions are tile-local) and the token grids
    are stitched back together in tile order.
    """
    hv, n = cfg.base_side, cfg.token_side
    if global_image.shape != (hv, hv, 3):
        raise ConfigError(f"global image must be [{hv}, {hv}, 3], got {global_image.shape}")
    if tiles.shape != (cfg.mag**2, hv, hv, 3):
        raise ConfigError(f"tiles must be [{cfg.mag**2}, {hv}, {hv}, 3], got {tiles.shape}")
    w_p = projection_matrix(cfg.dim, seed)
    f_global = _encode_view(global_image, n, w_p)
    f_tiles = np.stack([_encode_view(t, n, w_p) for t in tiles])
    f_local = assemble_tiles(f_tiles, cfg.mag)
    return FeatureMaps(f_global.astype(np.float32), np.ascontiguousarray(f_local, dtype=np.float32), cfg)


def load_features(global_path: str | os.PathLike, local_path: str | os.PathLike, cfg: GridConfig) -> FeatureMaps:
    return FeatureMaps(read_tensor(global_path), read_tensor(local_path), cfg)
