"""Mask metrics (IoU, IoP, gIoU, cIoU) and the selection losses with analytic gradients."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigError, DegenerateMaskError, NumericError, ShapeError
from .layers import log_softmax, softmax


def _pair(a, b):
    a = np.asarray(a) != 0
    b = np.asarray(b) != 0
    if a.shape != b.shape:
        raise ShapeError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


def intersection_union(a, b) -> tuple[int, int]:
    a, b = _pair(a, b)
    return int(np.count_nonzero(a & b)), int(np.count_nonzero(a | b))


def iou(a, b) -> float:
    inter, union = intersection_union(a, b)
    if union == 0:
        return 1.0
    return inter / union


def iop(proposal, gt) -> float:
    """Fraction of the proposal lying inside the ground truth."""
    p, g = _pair(proposal, gt)
    area = np.count_nonzero(p)
    if area == 0:
        raise DegenerateMaskError("IoP of an empty proposal is undefined")
    return int(np.count_nonzero(p & g)) / area


def oracle_scores(masks: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Ideal (S_sim, S_iop): IoU and IoP of every proposal against the ground truth."""
    return (
        np.array([iou(m, gt) for m in masks]),
        np.array([iop(m, gt) for m in masks]),
    )


@dataclass
class EvalReport:
    per_sample_iou: list[float]
    g_iou: float
    c_iou: float
    n: int
    total_intersection: int
    total_union: int
    ids: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "g_iou": self.g_iou,
                "c_iou": self.c_iou,
                "n": self.n,
                "total_intersection": self.total_intersection,
                "total_union": self.total_union,
                "per_sample_iou": self.per_sample_iou,
                "ids": self.ids,
            },
            indent=2,
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "iou"])
        ids = self.ids or [str(i) for i in range(self.n)]
        for sid, v in zip(ids, self.per_sample_iou):
            w.writerow([sid, repr(v)])
        w.writerow(["gIoU", repr(self.g_iou)])
        w.writerow(["cIoU", repr(self.c_iou)])
        return buf.getvalue()


def evaluate(preds, gts, ids=None) -> EvalReport:
    preds, gts = list(preds), list(gts)
    if len(preds) != len(gts):
        raise ShapeError(f"{len(preds)} predictions for {len(gts)} ground truths")
    if not preds:
        raise ConfigError("evaluate needs at least one sample")
    per, tot_i, tot_u = [], 0, 0
    for p, g in zip(preds, gts):
        inter, union = intersection_union(p, g)
        per.append(1.0 if union == 0 else inter / union)
        tot_i += inter
        tot_u += union
    g_iou = float(np.mean(per))
    c_iou = 1.0 if tot_u == 0 else tot_i / tot_u
    return EvalReport(per, g_iou, c_iou, len(per), tot_i, tot_u, list(ids) if ids is not None else [])


@dataclass(frozen=True)
class LossConfig:
    lambda_sim: float = 1.0
    lambda_sup: float = 1.0
    lambda_sel: float = 1.0
    lambda_text: float = 0.0
    kl_floor: float = 1e-8

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ConfigError(f"{k} must be >= 0, got {v}")

    def to_dict(self) -> dict:
        return asdict(self)


def iou_target(ious: np.ndarray, eps: float) -> np.ndarray:
    t = np.asarray(ious, dtype=np.float64) + eps
    total = t.sum()
    if not total > 0:
        raise NumericError("IoU target is all zero; use a positive kl_floor")
    return t / total


def loss_sim(s_sim: np.ndarray, ious: np.ndarray, cfg: LossConfig = LossConfig()) -> tuple[float, np.ndarray]:
    """KL(target || softmax(s_sim)) with target = floored, sum-normalised IoUs.

    Returns the value and its gradient w.r.t. ``s_sim`` (softmax(s_sim) - target).
    """
    s = np.asarray(s_sim, dtype=np.float64)
    ious = np.asarray(ious, dtype=np.float64)
    if s.shape != ious.shape or s.ndim != 1 or s.size < 2:
        raise ShapeError(f"need two equal 1-D vectors with K >= 2, got {s.shape} and {ious.shape}")
    p = iou_target(ious, cfg.kl_floor)
    log_q = log_softmax(s)
    nz = p > 0
    value = float(np.sum(p[nz] * (np.log(p[nz]) - log_q[nz])))
    return max(value, 0.0), softmax(s) - p


def loss_sup(iop_pred: np.ndarray, iop_gt: np.ndarray) -> tuple[float, np.ndarray]:
    pred = np.asarray(iop_pred, dtype=np.float64)
    gt = np.asarray(iop_gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"shape mismatch {pred.shape} vs {gt.shape}")
    diff = pred - gt
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


@dataclass(frozen=True)
class LossParts:
    sim: float
    sup: float
    text: float = 0.0


def selection_loss(parts: LossParts, cfg: LossConfig) -> float:
    return cfg.lambda_sim * parts.sim + cfg.lambda_sup * parts.sup


def loss_total(parts: LossParts, cfg: LossConfig = LossConfig()) -> float:
    vals = (parts.sim, parts.sup, parts.text)
    if not all(np.isfinite(v) for v in vals):
        raise NumericError(f"non-finite loss parts {vals}")
    return cfg.lambda_text * parts.text + cfg.lambda_sel * selection_loss(parts, cfg)
