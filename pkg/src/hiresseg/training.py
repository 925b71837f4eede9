"""Full-batch training of the selection heads and finite-difference gradient checks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import selection
from .errors import ConfigError, TrainingError
from .objectives import LossConfig, LossParts, loss_sim, loss_sup, selection_loss
from .selection import SelectionHeads

DEFAULT_LR = 3e-4
DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class TrainSample:
    """What the heads see for one image: enhanced mask features, the raw SEG vector, and targets."""

    m_hre: np.ndarray  # [K, d]
    seg_raw: np.ndarray  # [seg_dim]
    ious: np.ndarray  # [K] IoU of each proposal with the ground truth
    iops: np.ndarray  # [K] IoP of each proposal


@dataclass(frozen=True)
class TraceRow:
    step: int
    l_sel: float
    l_sim: float
    l_sup: float


def sample_loss(heads: SelectionHeads, s: TrainSample, cfg: LossConfig, with_pattern: bool = False):
    s_sim, s_iop, cache = selection.forward(s.m_hre, s.seg_raw, heads)
    parts = LossParts(loss_sim(s_sim, s.ious, cfg)[0], loss_sup(s_iop, s.iops)[0])
    value = cfg.lambda_sel * selection_loss(parts, cfg)
    if with_pattern:
        return value, selection.activation_pattern(cache)
    return parts, value


def sample_loss_and_grads(heads: SelectionHeads, s: TrainSample, cfg: LossConfig):
    """Objective lambda_sel * L_sel for one sample and its gradient for every head parameter."""
    s_sim, s_iop, cache = selection.forward(s.m_hre, s.seg_raw, heads)
    l_sim, g_sim = loss_sim(s_sim, s.ious, cfg)
    l_sup, g_iop = loss_sup(s_iop, s.iops)
    parts = LossParts(l_sim, l_sup)
    w = cfg.lambda_sel
    grads = selection.backward(w * cfg.lambda_sim * g_sim, w * cfg.lambda_sup * g_iop, cache, heads)
    return parts, w * selection_loss(parts, cfg), grads


def batch_loss_and_grads(heads: SelectionHeads, samples: Sequence[TrainSample], cfg: LossConfig):
    n = len(samples)
    total = {k: np.zeros_like(v) for k, v in heads.params.items()}
    sim = sup = obj = 0.0
    for s in samples:
        parts, value, grads = sample_loss_and_grads(heads, s, cfg)
        sim += parts.sim / n
        sup += parts.sup / n
        obj += value / n
        for k, g in grads.items():
            total[k] += g / n
    return LossParts(sim, sup), obj, total


class Adam:
    """Adam with bias correction. Deterministic given the same gradient sequence."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            m = self.m[k] = self.beta1 * self.m.get(k, 0.0) + (1.0 - self.beta1) * g
            v = self.v[k] = self.beta2 * self.v.get(k, 0.0) + (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params, grads):
        for k, g in grads.items():
            params[k] -= self.lr * g


OPTIMIZERS = {"adam": Adam, "sgd": SGD}


def train_heads(
    samples: Sequence[TrainSample],
    heads: SelectionHeads,
    steps: int,
    lr: float = DEFAULT_LR,
    cfg: LossConfig = LossConfig(),
    optimizer: str = "adam",
    min_samples: int = 8,
) -> tuple[SelectionHeads, list[TraceRow]]:
    """Full-batch descent on all head parameters; row ``i`` of the trace is the loss before update ``i``.

    The input heads are not modified.
    """
    if steps < 0:
        raise ConfigError(f"steps must be >= 0, got {steps}")
    if len(samples) < min_samples:
        raise ConfigError(f"training needs at least {min_samples} samples, got {len(samples)}")
    if optimizer not in OPTIMIZERS:
        raise ConfigError(f"unknown optimizer {optimizer!r}; choose from {sorted(OPTIMIZERS)}")
    heads = heads.copy()
    opt = OPTIMIZERS[optimizer](lr)
    trace: list[TraceRow] = []
    for step in range(steps):
        parts, _, grads = batch_loss_and_grads(heads, samples, cfg)
        l_sel = selection_loss(parts, cfg)
        if not np.isfinite(l_sel) or l_sel > DIVERGENCE_LIMIT:
            raise TrainingError(f"training diverged at step {step}: L_sel = {l_sel}")
        trace.append(TraceRow(step, l_sel, parts.sim, parts.sup))
        opt.step(heads.params, grads)
    return heads, trace


# -- finite-difference checks -------------------------------------------------


@dataclass(frozen=True)
class GradCheck:
    name: str
    max_rel_err: float
    worst_index: int
    passed: bool


REL_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), REL_FLOOR)


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, h: float) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        old = x.flat[i]
        x.flat[i] = old + h
        up = f(x)
        x.flat[i] = old - h
        down = f(x)
        x.flat[i] = old
        g.flat[i] = (up - down) / (2.0 * h)
    return g


def kink_aware_difference(f, x: np.ndarray, h: float, min_h: float = 1e-7) -> np.ndarray:
    """Central differences for a piecewise-smooth ``f`` returning ``(value, activation_pattern)``.

    When a +-h probe changes the ReLU pattern the step is shrunk tenfold (down to
    ``min_h``), so the difference is taken on the same linear piece as the analytic
    gradient.
    """
    x = np.array(x, dtype=np.float64)
    _, base = f(x)
    g = np.zeros_like(x)
    for i in range(x.size):
        old = x.flat[i]
        step = h
        while True:
            x.flat[i] = old + step
            up, p_up = f(x)
            x.flat[i] = old - step
            down, p_down = f(x)
            if (np.array_equal(p_up, base) and np.array_equal(p_down, base)) or step <= min_h:
                break
            step /= 10.0
        x.flat[i] = old
        g.flat[i] = (up - down) / (2.0 * step)
    return g


def _check(name, analytic, numeric, tol) -> GradCheck:
    err = relative_error(analytic, numeric)
    i = int(np.argmax(err))
    return GradCheck(name, float(err[i]), i, bool(err[i] <= tol))


def check_loss_sim(s_sim, ious, cfg: LossConfig = LossConfig(), h: float = 1e-4, tol: float = 1e-3) -> GradCheck:
    _, g = loss_sim(s_sim, ious, cfg)
    n = central_difference(lambda s: loss_sim(s, ious, cfg)[0], s_sim, h)
    return _check("loss_sim/s_sim", g, n, tol)


def check_loss_sup(pred, gt, h: float = 1e-4, tol: float = 1e-3) -> GradCheck:
    _, g = loss_sup(pred, gt)
    n = central_difference(lambda p: loss_sup(p, gt)[0], pred, h)
    return _check("loss_sup/iop_pred", g, n, tol)


def check_head_grads(
    heads: SelectionHeads,
    sample: TrainSample,
    cfg: LossConfig = LossConfig(),
    h: float = 1e-3,
    tol: float = 1e-3,
    perturb: str | None = None,
) -> list[GradCheck]:
    """Compare backprop against central differences for every head parameter.

    ``perturb`` names a parameter whose analytic gradient is deliberately corrupted,
    to confirm the checker notices.
    """
    _, _, grads = sample_loss_and_grads(heads, sample, cfg)
    if perturb is not None:
        if perturb not in grads:
            raise ConfigError(f"unknown parameter {perturb!r}")
        grads[perturb] = grads[perturb].copy()
        grads[perturb].flat[0] += 1e-2 * (1.0 + abs(grads[perturb].flat[0]))
    probe = heads.copy()
    results = []
    for name in heads.shapes():
        original = probe.params[name]

        def f(x, name=name):
            probe.params[name] = x
            return sample_loss(probe, sample, cfg, with_pattern=True)

        numeric = kink_aware_difference(f, original, h)
        probe.params[name] = original
        results.append(_check(name, grads[name], numeric, tol))
    return results
