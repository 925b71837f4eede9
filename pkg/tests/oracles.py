"""Slow, loop-based float64 reference implementations.

Nothing here imports the package's numeric code; each function restates the
math one element at a time so it can check the vectorised paths independently.
"""
import math
from fractions import Fraction

import numpy as np


def softmax_list(xs):
    m = max(xs)
    es = [math.exp(x - m) for x in xs]
    s = sum(es)
    return [e / s for e in es]


def attend(query, keys, values):
    d = len(query)
    scores = [float(np.dot(query, k)) / math.sqrt(d) for k in keys]
    w = softmax_list(scores)
    out = np.zeros(len(values[0]))
    for wi, v in zip(w, values):
        out += wi * v
    return out, w


def region_attention(f_global, f_local, wq, wk, wv, mag):
    f_global = np.asarray(f_global, np.float64)
    f_local = np.asarray(f_local, np.float64)
    wq, wk, wv = (np.asarray(w, np.float64) for w in (wq, wk, wv))
    n_g, _, d = f_global.shape
    out = np.zeros((n_g, n_g, d))
    weights = np.zeros((n_g, n_g, mag * mag))
    for a in range(n_g):
        for b in range(n_g):
            q = f_global[a, b] @ wq
            region = [f_local[a * mag + u, b * mag + v] for u in range(mag) for v in range(mag)]
            keys = [r @ wk for r in region]
            vals = [r @ wv for r in region]
            out[a, b], w = attend(q, keys, vals)
            weights[a, b] = w
    return out, weights


def mask_pool(masks, feats):
    masks = np.asarray(masks)
    feats = np.asarray(feats, np.float64)
    k, n, _ = masks.shape
    rows = []
    for i in range(k):
        acc = np.zeros(feats.shape[-1])
        count = 0
        for r in range(n):
            for c in range(n):
                if masks[i, r, c]:
                    acc += feats[r, c]
                    count += 1
        rows.append(acc / count)
    return np.array(rows)


def layer_norm_row(x, eps):
    x = [float(v) for v in x]
    mu = sum(x) / len(x)
    var = sum((v - mu) ** 2 for v in x) / len(x)
    return np.array([(v - mu) / math.sqrt(var + eps) for v in x])


def hre(m, hybrid, layers, eps):
    """layers: list of (wq, wk, wv)."""
    x = np.asarray(m, np.float64).copy()
    d = x.shape[1]
    toks = np.asarray(hybrid, np.float64).reshape(-1, d)
    for wq, wk, wv in layers:
        wq, wk, wv = (np.asarray(w, np.float64) for w in (wq, wk, wv))
        keys = [t @ wk for t in toks]
        vals = [t @ wv for t in toks]
        new = np.zeros_like(x)
        for i in range(x.shape[0]):
            a, _ = attend(x[i] @ wq, keys, vals)
            new[i] = layer_norm_row(x[i] + a, eps)
        x = new
    return x


def mlp(x, w1, b1, w2, b2):
    x = np.asarray(x, np.float64)
    h = np.array([max(0.0, float(np.dot(x, w1[:, j])) + b1[j]) for j in range(w1.shape[1])])
    return np.array([float(np.dot(h, w2[:, j])) + b2[j] for j in range(w2.shape[1])])


def selection_heads(m, raw, params, n_blocks, eps=1e-5):
    """Returns (s_sim, s_iop) following the documented head layout."""
    p = {k: np.asarray(v, np.float64) for k, v in params.items()}
    y = mlp(raw, p["proj.w1"], p["proj.b1"], p["proj.w2"], p["proj.b2"])
    x = np.asarray(m, np.float64).copy()
    for i in range(n_blocks):
        pre = f"fusion.{i}"
        rows = [r.copy() for r in x]
        keys = [r @ p[f"{pre}.self.wk"] for r in rows]
        vals = [r @ p[f"{pre}.self.wv"] for r in rows]
        x = np.array([layer_norm_row(r + attend(r @ p[f"{pre}.self.wq"], keys, vals)[0], eps) for r in rows])
        ck = [y @ p[f"{pre}.cross.wk"]]
        cv = [y @ p[f"{pre}.cross.wv"]]
        x = np.array([layer_norm_row(r + attend(r @ p[f"{pre}.cross.wq"], ck, cv)[0], eps) for r in x])
    s_sim, s_iop = [], []
    for r in x:
        s_sim.append(float(np.dot(y, mlp(r, p["sim.w1"], p["sim.b1"], p["sim.w2"], p["sim.b2"]))))
        z = mlp(r, p["iop.w1"], p["iop.b1"], p["iop.w2"], p["iop.b2"])[0]
        s_iop.append(1.0 / (1.0 + math.exp(-z)))
    return np.array(s_sim), np.array(s_iop)


MASK64 = (1 << 64) - 1


def splitmix64_stream(seed):
    x = seed
    while True:
        x = (x + 0x9E3779B97F4A7C15) & MASK64
        z = x
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        yield z ^ (z >> 31)


def projection(dim, seed):
    gen = splitmix64_stream(seed)
    vals = []
    while len(vals) < dim * 5:
        u1 = 1.0 - (next(gen) >> 11) / 2.0**53
        u2 = (next(gen) >> 11) / 2.0**53
        r = math.sqrt(-2.0 * math.log(u1))
        vals += [r * math.cos(2 * math.pi * u2), r * math.sin(2 * math.pi * u2)]
    return np.array(vals[: dim * 5]).reshape(dim, 5)


def encode_view(img, n, w):
    side = img.shape[0]
    p = side // n
    out = np.zeros((n, n, w.shape[0]))
    for r in range(n):
        for c in range(n):
            patch = img[r * p:(r + 1) * p, c * p:(c + 1) * p].astype(np.float64)
            x = [patch[..., ch].sum() / (p * p) / 255.0 for ch in range(3)] + [r / n, c / n]
            out[r, c] = w @ np.array(x)
    return out


def pseudo_encode(global_image, tiles, n, mag, dim, seed):
    w = projection(dim, seed)
    g = encode_view(global_image, n, w)
    local = np.zeros((n * mag, n * mag, dim))
    for t, tile in enumerate(tiles):
        i, j = divmod(t, mag)
        local[i * n:(i + 1) * n, j * n:(j + 1) * n] = encode_view(tile, n, w)
    return g, local


def bilinear(img, out_h, out_w):
    """Per-pixel half-pixel-centre bilinear in exact rationals, edge clamped, round half to even."""
    h, w, ch = img.shape

    def tap(i, n_in, n_out):
        s = Fraction(2 * i + 1, 2) * Fraction(n_in, n_out) - Fraction(1, 2)
        s = min(max(s, Fraction(0)), Fraction(n_in - 1))
        i0 = math.floor(s)
        return i0, min(i0 + 1, n_in - 1), s - i0

    out = np.zeros((out_h, out_w, ch), np.uint8)
    for y in range(out_h):
        y0, y1, fy = tap(y, h, out_h)
        for x in range(out_w):
            x0, x1, fx = tap(x, w, out_w)
            for c in range(ch):
                top = int(img[y0, x0, c]) * (1 - fx) + int(img[y0, x1, c]) * fx
                bot = int(img[y1, x0, c]) * (1 - fx) + int(img[y1, x1, c]) * fx
                out[y, x, c] = min(255, max(0, round(top * (1 - fy) + bot * fy)))
    return out


def voronoi(side, seeds):
    labels = np.zeros((side, side), int)
    for r in range(side):
        for c in range(side):
            best, best_d = 0, None
            for i, (sr, sc) in enumerate(seeds):
                dd = (r - sr) ** 2 + (c - sc) ** 2
                if best_d is None or dd < best_d:
                    best, best_d = i, dd
            labels[r, c] = best
    return labels
