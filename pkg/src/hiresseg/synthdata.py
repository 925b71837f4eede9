"""Synthetic over-segmented scenes: Voronoi proposals, ground truths, images, SEG vectors, manifests."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import FeatureMaps, load_features, pseudo_encode
from .errors import ConfigError, DegenerateMaskError, ShapeError
from .geometry import GridConfig, make_views
from .hre import init_perception
from .hrp import DEFAULT_GAMMA, check_masks, downsample_mask, fuse, mask_pool, region_attention
from .tensor_io import read_tensor, write_tensor

GT_MODES = ("exact", "union", "partial")
DEFAULT_SIGMA = 0.1
DEFAULT_SEG_DIM = 256


@dataclass
class MaskSet:
    masks: np.ndarray  # uint8 [K, n, n]
    gt: np.ndarray | None = None
    provenance: str = "synthetic"
    n_cells: int | None = None  # leading proposals that form the base partition

    def __post_init__(self):
        self.masks = check_masks(self.masks)
        empty = np.flatnonzero(~self.masks.reshape(self.masks.shape[0], -1).any(axis=1))
        if empty.size:
            raise DegenerateMaskError(f"proposals {empty.tolist()} are empty")
        if self.gt is not None:
            if self.gt.shape != self.masks.shape[1:]:
                raise ShapeError(f"gt shape {self.gt.shape} does not match proposals {self.masks.shape[1:]}")
            if not self.gt.any():
                raise DegenerateMaskError("ground truth mask is empty")

    @property
    def cells(self) -> np.ndarray:
        return self.masks[: self.n_cells if self.n_cells is not None else len(self.masks)]


def default_n_seeds(cfg: GridConfig) -> int:
    return int(min(cfg.n_global, max(2, cfg.n_global // 4)))


def voronoi_labels(side: int, seeds) -> np.ndarray:
    """Nearest-seed label per token (squared Euclidean on token coords); ties go to the lower seed."""
    seeds = np.asarray(seeds, dtype=np.int64).reshape(-1, 2)
    rr, cc = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    d2 = (rr[None] - seeds[:, 0, None, None]) ** 2 + (cc[None] - seeds[:, 1, None, None]) ** 2
    return np.argmin(d2, axis=0)


def adjacent_pairs(labels: np.ndarray) -> list[tuple[int, int]]:
    pairs = set()
    for a, b in ((labels[:-1, :], labels[1:, :]), (labels[:, :-1], labels[:, 1:])):
        diff = a != b
        for x, y in zip(a[diff].tolist(), b[diff].tolist()):
            pairs.add((min(x, y), max(x, y)))
    return sorted(pairs)


def proposals_from_seeds(side: int, seeds, n_extra: int, rng: np.random.Generator) -> MaskSet:
    labels = voronoi_labels(side, seeds)
    n_cells = len(np.asarray(seeds).reshape(-1, 2))
    cells = (labels[None] == np.arange(n_cells)[:, None, None]).astype(np.uint8)
    pairs = adjacent_pairs(labels)
    n_extra = min(n_extra, len(pairs))
    extra = [pairs[i] for i in sorted(rng.choice(len(pairs), size=n_extra, replace=False))] if n_extra else []
    unions = [cells[i] | cells[j] for i, j in extra]
    masks = np.concatenate([cells, np.array(unions, dtype=np.uint8).reshape(-1, side, side)])
    return MaskSet(masks, n_cells=n_cells)


def gen_proposals(cfg: GridConfig, seed: int, n_seeds: int | None = None) -> MaskSet:
    """Voronoi cells around ``n_seeds`` distinct seed tokens plus floor(n_seeds/4) two-cell unions."""
    n_seeds = default_n_seeds(cfg) if n_seeds is None else int(n_seeds)
    if not 2 <= n_seeds <= cfg.n_global:
        raise ConfigError(f"n_seeds must lie in [2, {cfg.n_global}], got {n_seeds}")
    rng = np.random.default_rng(seed)
    side = cfg.token_side
    flat = rng.choice(cfg.n_global, size=n_seeds, replace=False)
    seeds = np.stack([flat // side, flat % side], axis=1)
    return proposals_from_seeds(side, seeds, n_seeds // 4, rng)


def _matches_a_proposal(masks: np.ndarray, gt: np.ndarray) -> bool:
    return bool((masks == gt[None]).reshape(len(masks), -1).all(axis=1).any())


def gen_gt(maskset: MaskSet, seed: int, mode: str, max_tries: int = 1000) -> np.ndarray:
    if mode not in GT_MODES:
        raise ConfigError(f"gt mode must be one of {GT_MODES}, got {mode!r}")
    rng = np.random.default_rng(seed)
    masks, cells = maskset.masks, maskset.cells
    side = masks.shape[1]
    if mode == "exact":
        return masks[int(rng.integers(len(masks)))].copy()

    if mode == "union":
        labels = np.argmax(cells, axis=0)
        pairs = adjacent_pairs(labels)
        neighbours = {i: set() for i in range(len(cells))}
        for a, b in pairs:
            neighbours[a].add(b)
            neighbours[b].add(a)
        for _ in range(max_tries):
            want = int(rng.integers(2, 4))
            group = [int(rng.integers(len(cells)))]
            while len(group) < want:
                frontier = sorted(set().union(*(neighbours[g] for g in group)) - set(group))
                if not frontier:
                    break
                group.append(frontier[int(rng.integers(len(frontier)))])
            if len(group) < 2:
                continue
            gt = np.any(cells[group] != 0, axis=0).astype(np.uint8)
            if not _matches_a_proposal(masks, gt):
                return gt
        raise ConfigError("could not build a union ground truth distinct from every proposal")

    for _ in range(max_tries):
        r0, r1 = sorted(rng.integers(0, side + 1, size=2))
        c0, c1 = sorted(rng.integers(0, side + 1, size=2))
        if r1 - r0 < 1 or c1 - c0 < 1:
            continue
        gt = np.zeros((side, side), dtype=np.uint8)
        gt[r0:r1, c0:c1] = 1
        overlap = (cells & gt[None]).reshape(len(cells), -1).sum(axis=1)
        sizes = cells.reshape(len(cells), -1).sum(axis=1)
        partial = ((overlap > 0) & (overlap < sizes)).any()
        if partial and not _matches_a_proposal(masks, gt):
            return gt
    raise ConfigError("could not build a partial ground truth")


def render_image(labels: np.ndarray, side_px: int, rng: np.random.Generator) -> np.ndarray:
    """Procedural colour field: one flat colour per cell, a soft gradient, and mild noise."""
    n_cells = int(labels.max()) + 1
    palette = rng.uniform(20, 235, size=(n_cells, 3))
    rep = side_px // labels.shape[0]
    field_ = palette[np.repeat(np.repeat(labels, rep, axis=0), rep, axis=1)]
    t = np.linspace(-1.0, 1.0, side_px)
    tilt = rng.uniform(-15, 15, size=3)
    field_ += (t[:, None, None] * tilt + t[None, :, None] * tilt[::-1])
    field_ += rng.normal(0.0, 3.0, size=field_.shape)
    return np.clip(np.rint(field_), 0, 255).astype(np.uint8)


def lift_matrix(dim: int, seg_dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 0x11F7])
    return rng.normal(0.0, 1.0 / np.sqrt(dim), size=(seg_dim, dim))


def synth_seg_embedding(f_hybrid, gt, lift: np.ndarray, rng: np.random.Generator, sigma: float = DEFAULT_SIGMA):
    """Pooled ground-truth hybrid feature plus Gaussian noise, lifted to the SEG dimension."""
    pooled = mask_pool(gt[None], f_hybrid)[0].astype(np.float64)
    noisy = pooled + rng.normal(0.0, sigma, size=pooled.shape)
    return (lift @ noisy).astype(np.float32)


@dataclass
class Sample:
    id: str
    global_features: str
    local_features: str
    masks: str
    gt: str
    seg_embedding: str
    gt_mode: str | None = None

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("id", "global_features", "local_features", "masks", "gt", "seg_embedding")}
        if self.gt_mode is not None:
            d["gt_mode"] = self.gt_mode
        return d


@dataclass
class Manifest:
    config: dict
    seed: int
    samples: list[Sample] = field(default_factory=list)
    root: Path = Path(".")

    @property
    def grid(self) -> GridConfig:
        return GridConfig.from_dict(self.config)

    def to_json(self) -> str:
        return json.dumps(
            {"config": self.config, "seed": self.seed, "samples": [s.to_dict() for s in self.samples]},
            indent=2,
            sort_keys=False,
        ) + "\n"

    def resolve(self, rel: str) -> Path:
        return self.root / rel


def load_manifest(path: str | os.PathLike) -> Manifest:
    path = Path(path)
    with open(path) as fh:
        raw = json.load(fh)
    try:
        samples = [Sample(**s) for s in raw["samples"]]
        man = Manifest(dict(raw["config"]), int(raw["seed"]), samples, path.parent)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed manifest {path}: {exc}") from exc
    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"manifest {path} has duplicate sample ids")
    for s in samples:
        for key in ("global_features", "local_features", "masks", "gt", "seg_embedding"):
            p = man.resolve(getattr(s, key))
            if not p.is_file():
                raise FileNotFoundError(f"sample {s.id}: {key} file {p} does not exist")
    man.grid  # validates geometry
    return man


@dataclass
class LoadedSample:
    id: str
    features: FeatureMaps
    masks: np.ndarray
    gt: np.ndarray
    seg_raw: np.ndarray


def _to_token_grid(mask: np.ndarray, side: int) -> np.ndarray:
    if mask.shape[-2:] == (side, side):
        return mask
    return downsample_mask(mask, side)


def load_gt(man: Manifest, s: Sample) -> np.ndarray:
    gt = _to_token_grid(read_tensor(man.resolve(s.gt)), man.grid.token_side)
    if gt.dtype != np.uint8:
        raise ConfigError(f"sample {s.id}: gt must be uint8")
    return gt


def load_sample(man: Manifest, s: Sample) -> LoadedSample:
    """Read one sample; pixel-resolution masks are reduced to the token grid."""
    cfg = man.grid
    fm = load_features(man.resolve(s.global_features), man.resolve(s.local_features), cfg)
    masks = read_tensor(man.resolve(s.masks))
    if masks.ndim == 2:
        masks = masks[None]
    masks = check_masks(_to_token_grid(masks, cfg.token_side), cfg.token_side)
    gt = load_gt(man, s)
    seg = read_tensor(man.resolve(s.seg_embedding))
    if seg.dtype != np.float32:
        raise ConfigError(f"sample {s.id}: SEG embedding must be float32")
    return LoadedSample(s.id, fm, masks, gt, seg.reshape(-1))


def make_sample(cfg: GridConfig, seed: int, index: int, gt_mode: str, *, n_seeds=None,
                seg_dim: int = DEFAULT_SEG_DIM, sigma: float = DEFAULT_SIGMA, model_seed: int = 0,
                gamma: float = DEFAULT_GAMMA, lift: np.ndarray | None = None):
    """Generate one sample in memory: (FeatureMaps, MaskSet with gt, SEG vector, image, mode)."""
    rng = np.random.default_rng([seed, index])
    if gt_mode == "mixed":
        gt_mode = GT_MODES[int(rng.integers(len(GT_MODES)))]
    sub = rng.integers(0, 2**63, size=4)
    maskset = gen_proposals(cfg, int(sub[0]), n_seeds)
    maskset.gt = gen_gt(maskset, int(sub[1]), gt_mode)
    labels = np.argmax(maskset.cells, axis=0)
    image = render_image(labels, cfg.mag * cfg.base_side, np.random.default_rng(int(sub[2])))
    # the encoder and the SEG lift stand in for fixed pretrained models, so they follow
    # model_seed rather than the dataset seed; train and test splits then share them
    fm = pseudo_encode(*make_views(image, cfg), cfg, model_seed)
    attn, _ = init_perception(cfg.dim, seed=model_seed)
    hybrid = fuse(fm.f_global, region_attention(fm, attn), gamma)
    if lift is None:
        lift = lift_matrix(cfg.dim, seg_dim, model_seed)
    seg = synth_seg_embedding(hybrid, maskset.gt, lift, np.random.default_rng(int(sub[3])), sigma)
    return fm, maskset, seg, image, gt_mode


def build_dataset(n: int, cfg: GridConfig, seed: int, out_dir: str | os.PathLike, *,
                  gt_mode: str = "mixed", n_seeds: int | None = None, seg_dim: int = DEFAULT_SEG_DIM,
                  sigma: float = DEFAULT_SIGMA, model_seed: int = 0) -> Manifest:
    if n < 1:
        raise ConfigError(f"--n must be >= 1, got {n}")
    if gt_mode != "mixed" and gt_mode not in GT_MODES:
        raise ConfigError(f"gt mode must be 'mixed' or one of {GT_MODES}, got {gt_mode!r}")
    if seg_dim < 1:
        raise ConfigError(f"seg_dim must be >= 1, got {seg_dim}")
    out = Path(out_dir)
    config = cfg.to_dict() | {
        "seg_dim": seg_dim,
        "n_seeds": default_n_seeds(cfg) if n_seeds is None else int(n_seeds),
        "sigma": sigma,
        "model_seed": model_seed,
        "gt_mode": gt_mode,
    }
    man = Manifest(config, int(seed), [], out)
    lift = lift_matrix(cfg.dim, seg_dim, model_seed)
    width = max(4, len(str(n - 1)))
    for i in range(n):
        fm, maskset, seg, _, mode = make_sample(
            cfg, seed, i, gt_mode, n_seeds=n_seeds, seg_dim=seg_dim, sigma=sigma,
            model_seed=model_seed, lift=lift,
        )
        sid = f"s{i:0{width}d}"
        rel = Path("samples") / sid
        (out / rel).mkdir(parents=True, exist_ok=True)
        files = {
            "global_features": (rel / "global.hrtf", fm.f_global),
            "local_features": (rel / "local.hrtf", fm.f_local),
            "masks": (rel / "masks.hrtf", maskset.masks),
            "gt": (rel / "gt.hrtf", maskset.gt),
            "seg_embedding": (rel / "seg.hrtf", seg),
        }
        for p, arr in files.values():
            write_tensor(arr, out / p)
        man.samples.append(Sample(sid, *(p.as_posix() for p, _ in files.values()), gt_mode=mode))
    (out / "manifest.json").write_text(man.to_json())
    return man
