"""End-to-end per-sample pipeline plus run/report/sweep orchestration used by the CLI."""
from __future__ import annotations

import csv
import io
import json
import logging
import os
from dataclasses import dataclass, asdict, field, fields, replace
from pathlib import Path

import numpy as np

from . import synthdata
from .errors import ConfigError, DegenerateMaskError
from .geometry import GridConfig
from .hre import DEFAULT_LAYERS, hre_forward, init_perception
from .hrp import DEFAULT_GAMMA, PoolSource, drop_empty, hrp_forward
from .objectives import EvalReport, LossConfig, evaluate, oracle_scores
from .selection import (
    DEFAULT_K_TOP,
    DEFAULT_STRATEGY,
    DEFAULT_THRESHOLD,
    SelectionHeads,
    Strategy,
    score,
    select,
)
from .tensor_io import read_tensor, write_tensor
from .training import TrainSample

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    gamma: float = DEFAULT_GAMMA
    layers: int = DEFAULT_LAYERS
    pool_source: str = PoolSource.HYBRID.value
    strategy: str = DEFAULT_STRATEGY.value
    k_top: int = DEFAULT_K_TOP
    threshold: float = DEFAULT_THRESHOLD
    model_seed: int = 0
    head_seed: int = 0
    fusion_blocks: int = 2
    heads: str | None = None
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}")
        if self.k_top < 1:
            raise ConfigError(f"k_top must be >= 1, got {self.k_top}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError(f"threshold must lie in [0, 1], got {self.threshold}")
        try:
            PoolSource(self.pool_source)
            Strategy(self.strategy)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss"] = self.loss.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        d = dict(d)
        if "loss" in d and isinstance(d["loss"], dict):
            d["loss"] = LossConfig(**d["loss"])
        return cls(**d)

    def with_overrides(self, **kw) -> "PipelineConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self


_COERCE = {"gamma": float, "threshold": float, "layers": int, "k_top": int, "model_seed": int,
           "head_seed": int, "fusion_blocks": int, "pool_source": str, "strategy": str, "heads": str}


def parse_config_arg(arg: str | None) -> dict:
    """``--config`` accepts a JSON file path or inline ``key=value[,key=value]`` pairs."""
    if not arg:
        return {}
    if "=" in arg and not os.path.exists(arg):
        out = {}
        for item in arg.split(","):
            key, _, value = item.partition("=")
            key = key.strip().replace("-", "_")
            if key not in _COERCE:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                out[key] = _COERCE[key](value.strip())
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {value!r}") from exc
        return out
    with open(arg) as fh:
        return json.load(fh)


# -- heads bundle -------------------------------------------------------------------


def save_heads(heads: SelectionHeads, out_dir: str | os.PathLike) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = {"dim": heads.dim, "seg_dim": heads.seg_dim, "n_blocks": heads.n_blocks,
             "ln_eps": heads.ln_eps, "params": {}}
    for name, arr in heads.params.items():
        fname = f"{name}.hrtf"
        write_tensor(arr.astype(np.float32), out / fname)
        index["params"][name] = fname
    (out / "heads.json").write_text(json.dumps(index, indent=2) + "\n")
    return out / "heads.json"


def load_heads(path: str | os.PathLike) -> SelectionHeads:
    path = Path(path)
    if path.is_dir():
        path = path / "heads.json"
    index = json.loads(path.read_text())
    params = {name: read_tensor(path.parent / f).astype(np.float64) for name, f in index["params"].items()}
    return SelectionHeads(int(index["dim"]), int(index["seg_dim"]), int(index["n_blocks"]),
                          float(index["ln_eps"]), params)


# -- per-sample pipeline --------------------------------------------------------------


@dataclass
class SampleResult:
    id: str
    chosen: list[int]
    s_sim: list[float]
    s_iop: list[float]
    dropped: list[int]
    pred: np.ndarray

    def to_dict(self, pred_path: str) -> dict:
        return {"id": self.id, "chosen": self.chosen, "s_sim": self.s_sim, "s_iop": self.s_iop,
                "dropped": self.dropped, "pred_mask": pred_path}


class Pipeline:
    """HRP -> HRE -> selection heads (or oracle scores) -> selection strategy."""

    def __init__(self, cfg: PipelineConfig, grid: GridConfig, seg_dim: int, oracle: bool = False):
        self.cfg, self.grid, self.oracle = cfg, grid, oracle
        self.attn, self.hre = init_perception(grid.dim, cfg.layers, cfg.model_seed)
        if cfg.heads:
            self.heads = load_heads(cfg.heads)
            if self.heads.dim != grid.dim or self.heads.seg_dim != seg_dim:
                raise ConfigError(
                    f"heads expect d={self.heads.dim}, seg_dim={self.heads.seg_dim}; "
                    f"data has d={grid.dim}, seg_dim={seg_dim}"
                )
        else:
            self.heads = SelectionHeads.init(grid.dim, seg_dim, cfg.head_seed, cfg.fusion_blocks)

    def enhance(self, s: synthdata.LoadedSample):
        """Drop empty proposals, then return (kept masks, kept indices, M_HRE)."""
        masks, keep = drop_empty(s.masks)
        dropped = sorted(set(range(len(s.masks))) - set(keep.tolist()))
        if dropped:
            log.warning("sample %s: dropped empty proposals %s", s.id, dropped)
        if len(keep) == 0:
            raise DegenerateMaskError(f"sample {s.id} has no non-empty proposal")
        hybrid, m_hrp = hrp_forward(s.features, masks, self.attn, self.cfg.gamma, self.cfg.pool_source)
        return masks, keep, hre_forward(m_hrp, hybrid.f_hybrid, self.hre)

    def run_sample(self, s: synthdata.LoadedSample) -> SampleResult:
        masks, keep, m_hre = self.enhance(s)
        if self.oracle:
            s_sim, s_iop = oracle_scores(masks, s.gt)
        else:
            s_sim, s_iop = score(m_hre, s.seg_raw, self.heads)
        out = select(s_sim, s_iop, masks, self.cfg.strategy, self.cfg.k_top, self.cfg.threshold)
        dropped = sorted(set(range(len(s.masks))) - set(keep.tolist()))
        return SampleResult(
            s.id,
            [int(keep[i]) for i in out.chosen],
            [float(v) for v in s_sim],
            [float(v) for v in s_iop],
            dropped,
            out.final_mask,
        )

    def train_sample(self, s: synthdata.LoadedSample) -> TrainSample:
        masks, _, m_hre = self.enhance(s)
        ious, iops = oracle_scores(masks, s.gt)
        return TrainSample(m_hre, s.seg_raw.astype(np.float64), ious, iops)


def run_manifest(man: synthdata.Manifest, cfg: PipelineConfig, out_dir: str | os.PathLike,
                 oracle: bool = False, manifest_ref: str | None = None) -> dict:
    out = Path(out_dir)
    (out / "pred").mkdir(parents=True, exist_ok=True)
    pipe = Pipeline(cfg, man.grid, int(man.config.get("seg_dim", synthdata.DEFAULT_SEG_DIM)), oracle)
    records = []
    for sample in sorted(man.samples, key=lambda s: s.id):
        loaded = synthdata.load_sample(man, sample)
        try:
            res = pipe.run_sample(loaded)
        except DegenerateMaskError as exc:
            log.warning("skipping sample %s: %s", sample.id, exc)
            continue
        rel = f"pred/{res.id}.hrtf"
        write_tensor(res.pred, out / rel)
        records.append(res.to_dict(rel))
    run = {
        "manifest": manifest_ref,
        "oracle_scores": oracle,
        "config": cfg.to_dict() | {"grid": man.grid.to_dict()},
        "samples": records,
    }
    (out / "run.json").write_text(json.dumps(run, indent=2) + "\n")
    return run


def evaluate_run(run: dict, run_dir: str | os.PathLike, man: synthdata.Manifest) -> EvalReport:
    run_dir = Path(run_dir)
    by_id = {s.id: s for s in man.samples}
    run_ids = [r["id"] for r in run["samples"]]
    missing = sorted(set(run_ids) - set(by_id))
    if missing:
        raise ConfigError(f"run contains ids not in manifest: {missing}")
    if not run_ids:
        raise ConfigError("run has no samples")
    preds, gts = [], []
    for r in run["samples"]:
        preds.append(read_tensor(run_dir / r["pred_mask"]))
        gts.append(synthdata.load_gt(man, by_id[r["id"]]))
    return evaluate(preds, gts, run_ids)


def write_report(report: EvalReport, path: str | os.PathLike, config: dict | None = None) -> tuple[Path, Path]:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = json.loads(report.to_json())
    if config is not None:
        payload["config"] = config
    path.write_text(json.dumps(payload, indent=2) + "\n")
    csv_path = path.with_suffix(".csv")
    csv_path.write_text(report.to_csv())
    return path, csv_path


SWEEP_PARAMS = {"gamma": float, "mag": int, "threshold": float, "strategy": str, "ktop": int}


def sweep(man: synthdata.Manifest, base: PipelineConfig, param: str, values: list[str],
          out_dir: str | os.PathLike, oracle: bool = False) -> list[dict]:
    """Run + evaluate once per value; ``mag`` resynthesises the dataset at each magnification."""
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"--param must be one of {sorted(SWEEP_PARAMS)}, got {param!r}")
    out = Path(out_dir)
    rows = []
    for raw_value in values:
        try:
            value = SWEEP_PARAMS[param](raw_value)
        except ValueError as exc:
            raise ConfigError(f"bad {param} value {raw_value!r}") from exc
        sub = out / f"{param}_{raw_value}"
        cfg, data = base, man
        if param == "gamma":
            cfg = base.with_overrides(gamma=value)
        elif param == "threshold":
            cfg = base.with_overrides(threshold=value)
        elif param == "ktop":
            cfg = base.with_overrides(k_top=value)
        elif param == "strategy":
            cfg = base.with_overrides(strategy=Strategy(value).value)
        else:
            grid = replace(man.grid, mag=value)
            c = man.config
            data = synthdata.build_dataset(
                len(man.samples), grid, man.seed, sub / "data", gt_mode=c.get("gt_mode", "mixed"),
                n_seeds=c.get("n_seeds"), seg_dim=int(c.get("seg_dim", synthdata.DEFAULT_SEG_DIM)),
                sigma=float(c.get("sigma", synthdata.DEFAULT_SIGMA)), model_seed=int(c.get("model_seed", 0)),
            )
        run = run_manifest(data, cfg, sub / "run", oracle)
        report = evaluate_run(run, sub / "run", data)
        rows.append({"param": param, "value": raw_value, "g_iou": report.g_iou, "c_iou": report.c_iou,
                     "n": report.n})
    return rows


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["param", "value", "g_iou", "c_iou", "n"], lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({**r, "g_iou": repr(r["g_iou"]), "c_iou": repr(r["c_iou"])})
    return buf.getvalue()


def gradcheck_case(seed: int, dim: int = 8, seg_dim: int = 12, token_side: int = 4):
    """A small but fully realistic (heads, TrainSample) pair for finite-difference checks."""
    grid = GridConfig(base_side=4 * token_side, mag=2, token_side=token_side, dim=dim)
    fm, maskset, seg, _, _ = synthdata.make_sample(grid, seed, 0, "partial", seg_dim=seg_dim)
    loaded = synthdata.LoadedSample("gradcheck", fm, maskset.masks, maskset.gt, seg)
    pipe = Pipeline(PipelineConfig(head_seed=seed), grid, seg_dim)
    return pipe.heads, pipe.train_sample(loaded)
