"""Grid geometry: global/local views of an image and the global-token -> local-block map."""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .errors import ConfigError, InputError


@dataclass(frozen=True)
class GridConfig:
    """Square grid geometry.

    ``base_side`` is the encoder input side in pixels, ``mag`` the magnification
    of the local view, ``token_side`` tokens per global side, ``dim`` channels.
    """

    base_side: int = 518
    mag: int = 2
    token_side: int = 37
    dim: int = 64

    def __post_init__(self):
        for name in ("base_side", "mag", "token_side", "dim"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.base_side % self.token_side:
            raise ConfigError(
                f"base_side {self.base_side} is not divisible by token_side {self.token_side}"
            )

    @property
    def local_side(self) -> int:
        return self.mag * self.token_side

    @property
    def n_global(self) -> int:
        return self.token_side**2

    @property
    def n_local(self) -> int:
        return self.local_side**2

    @property
    def patch(self) -> int:
        return self.base_side // self.token_side

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GridConfig":
        return cls(**{k: int(d[k]) for k in ("base_side", "mag", "token_side", "dim") if k in d})


def _axis_weights(n_in: int, n_out: int):
    """Integer bilinear taps along one axis.

    Source coordinate (half-pixel centres, align_corners=False, edge-clamped) is
    ``i0 + num / den`` with ``den = 2 * n_out``, so all weights are exact rationals.
    """
    den = 2 * n_out
    pos = (2 * np.arange(n_out, dtype=np.int64) + 1) * n_in - n_out  # source coord * den
    pos = np.clip(pos, 0, (n_in - 1) * den)
    i0 = pos // den
    num = pos - i0 * den
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, num, den


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a uint8 [H, W, C] image.

    The interpolation is carried out exactly in integers and rounded half-to-even,
    so results are bit-reproducible.
    """
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise InputError(f"expected a non-empty [H, W, C] image, got shape {img.shape}")
    src = img.astype(np.int64)
    r0, r1, nr, dr = _axis_weights(img.shape[0], out_h)
    c0, c1, nc, dc = _axis_weights(img.shape[1], out_w)
    nr = nr[:, None, None]
    nc = nc[None, :, None]
    top = src[r0][:, c0] * (dc - nc) + src[r0][:, c1] * nc
    bot = src[r1][:, c0] * (dc - nc) + src[r1][:, c1] * nc
    total = top * (dr - nr) + bot * nr
    denom = dr * dc
    q, r = np.divmod(total, denom)
    q += (2 * r > denom) | ((2 * r == denom) & (q % 2 == 1))
    return np.clip(q, 0, 255).astype(np.uint8)


def make_views(image: np.ndarray, cfg: GridConfig) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(global_image [Hv,Hv,3], tiles [N*N,Hv,Hv,3])``.

    Non-square inputs are squashed to square. Tiles come out in row-major tile order.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.shape[0] < 1 or image.shape[1] < 1:
        raise InputError(f"expected a non-empty [H, W, 3] image, got shape {image.shape}")
    hv, n = cfg.base_side, cfg.mag
    global_image = resize_bilinear(image, hv, hv)
    local = resize_bilinear(image, n * hv, n * hv)
    tiles = local.reshape(n, hv, n, hv, 3).transpose(0, 2, 1, 3, 4).reshape(n * n, hv, hv, 3)
    return global_image, np.ascontiguousarray(tiles)


def assemble_tiles(tile_grids: np.ndarray, mag: int) -> np.ndarray:
    """Inverse of the tiling: [N*N, h, w, ...] in row-major tile order -> [N*h, N*w, ...]."""
    t = np.asarray(tile_grids)
    h, w = t.shape[1], t.shape[2]
    rest = t.shape[3:]
    grid = t.reshape((mag, mag, h, w) + rest)
    grid = np.moveaxis(grid, 2, 1)  # (N, h, N, w, ...)
    return grid.reshape((mag * h, mag * w) + rest)


def region_index(cfg: GridConfig, a: int, b: int) -> list[tuple[int, int]]:
    """Local-token coordinates of the N x N block paired with global token (a, b)."""
    if not (0 <= a < cfg.token_side and 0 <= b < cfg.token_side):
        raise IndexError(f"global token ({a}, {b}) outside {cfg.token_side}x{cfg.token_side} grid")
    n = cfg.mag
    return [(a * n + u, b * n + v) for u in range(n) for v in range(n)]


def region_blocks(f_local: np.ndarray, mag: int) -> np.ndarray:
    """[n_l, n_l, d] -> [n_g, n_g, N*N, d], block tokens ordered as in ``region_index``."""
    n_l, _, d = f_local.shape
    n_g = n_l // mag
    blocks = f_local.reshape(n_g, mag, n_g, mag, d).transpose(0, 2, 1, 3, 4)
    return blocks.reshape(n_g, n_g, mag * mag, d)
