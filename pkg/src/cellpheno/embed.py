"""Ensemble embeddings, exact t-SNE and silhouette scoring."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .jsonio import read_csv, write_csv

log = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-12
# overlay / scatter palette, one colour per cell type in CellType order
PALETTE = ((220, 30, 30), (30, 160, 30), (30, 60, 220), (245, 140, 0), (140, 40, 180))


def concat_member_embeddings(members) -> np.ndarray:
    """Row-wise concatenation of per-member ``N x D_m`` hidden activations."""
    members = [np.asarray(m, dtype=np.float64) for m in members]
    if not members:
        raise ValueError("need at least one member embedding")
    n = members[0].shape[0]
    if any(m.ndim != 2 or m.shape[0] != n for m in members):
        raise ValueError(f"member embeddings disagree on row count: {[m.shape for m in members]}")
    return np.concatenate(members, axis=1)


def squared_distances(x: np.ndarray) -> np.ndarray:
    sq = np.sum(x * x, axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * x @ x.T
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def _row_entropy(d_row, beta):
    """Entropy in bits and the normalised row for precision ``beta``."""
    shifted = -(d_row - d_row.min()) * beta
    p = np.exp(shifted)
    s = p.sum()
    p /= s
    h_nats = np.log(s) + beta * np.sum((d_row - d_row.min()) * p)
    return h_nats / np.log(2.0), p


def conditional_affinities(x: np.ndarray, perplexity: float, tol: float = 1e-5, max_iter: int = 200):
    """Row-stochastic ``P(j|i)`` with each row's entropy matched to ``log2(perplexity)``.

    Returns the matrix and the achieved per-row entropies (bits).
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if not (1.0 < perplexity < n):
        raise ValueError(f"perplexity must lie in (1, {n})")
    d = squared_distances(x)
    target = np.log2(perplexity)
    beta_max = 1.0 / (2.0 * SIGMA_FLOOR ** 2)
    p = np.zeros((n, n))
    entropies = np.zeros(n)
    for i in range(n):
        d_row = np.delete(d[i], i)
        beta, lo, hi = 1.0, 0.0, np.inf
        for _ in range(max_iter):
            h, row = _row_entropy(d_row, beta)
            if abs(h - target) < tol:
                break
            if h > target:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = (beta + lo) / 2.0
            beta = min(beta, beta_max)
        entropies[i] = h
        p[i, np.arange(n) != i] = row
    return p, entropies


def pairwise_affinities(x: np.ndarray, perplexity: float = 30.0) -> np.ndarray:
    """Symmetric joint affinities ``(P + P^T) / 2N`` with zero diagonal."""
    p, _ = conditional_affinities(x, perplexity)
    n = p.shape[0]
    return (p + p.T) / (2.0 * n)


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    exaggeration: float = 12.0
    exaggeration_iters: int = 250
    learning_rate: float = 200.0
    momentum_start: float = 0.5
    momentum_final: float = 0.8
    momentum_switch: int = 250
    min_gain: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


def effective_perplexity(n: int, perplexity: float) -> float:
    cap = (n - 1) / 3.0
    if perplexity > cap:
        log.warning("perplexity %.3g too large for %d points; using %.3g", perplexity, n, cap)
        return cap
    return perplexity


def _student_t(y):
    num = 1.0 / (1.0 + squared_distances(y))
    np.fill_diagonal(num, 0.0)
    return num, num / num.sum()


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / np.maximum(q[mask], 1e-300))))


@dataclass
class TsneResult:
    embedding: np.ndarray
    kl: float
    initial_kl: float
    perplexity: float


def tsne(x: np.ndarray, cfg: TsneConfig = TsneConfig()) -> TsneResult:
    """Exact t-SNE to two dimensions by gradient descent with momentum and gains."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < 5:
        raise ValueError("t-SNE needs at least 5 points")
    if not np.all(np.isfinite(x)):
        raise ValueError("embedding contains non-finite values")
    perp = effective_perplexity(n, cfg.perplexity)
    p = np.maximum(pairwise_affinities(x, perp), 1e-12)
    np.fill_diagonal(p, 0.0)
    p /= p.sum()
    rng = np.random.default_rng(cfg.seed)
    y = rng.normal(0.0, 1e-4, size=(n, 2))
    initial_kl = kl_divergence(p, _student_t(y)[1])
    update = np.zeros_like(y)
    gains = np.ones_like(y)
    for it in range(cfg.iterations):
        exag = cfg.exaggeration if it < cfg.exaggeration_iters else 1.0
        mom = cfg.momentum_start if it < cfg.momentum_switch else cfg.momentum_final
        num, q = _student_t(y)
        w = (exag * p - q) * num
        grad = 4.0 * (np.diag(w.sum(axis=1)) - w) @ y
        same = np.sign(grad) == np.sign(update)
        gains = np.where(same, gains * 0.8, gains + 0.2)
        gains = np.maximum(gains, cfg.min_gain)
        update = mom * update - cfg.learning_rate * gains * grad
        y = y + update
        y = y - y.mean(axis=0)
        if not np.all(np.isfinite(y)):
            raise FloatingPointError(f"t-SNE diverged at iteration {it}")
    final = kl_divergence(p, _student_t(y)[1])
    return TsneResult(y, final, initial_kl, perp)


def silhouette(points: np.ndarray, labels) -> float:
    """Mean silhouette coefficient with Euclidean distance.

    Points alone in their cluster score 0.
    """
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ValueError("silhouette needs at least two clusters")
    d = np.sqrt(squared_distances(points))
    n = len(points)
    s = np.zeros(n)
    for i in range(n):
        own = labels == labels[i]
        n_own = own.sum() - 1
        if n_own == 0:
            continue
        a = d[i, own].sum() / n_own
        b = min(d[i, labels == c].mean() for c in classes if c != labels[i])
        s[i] = 0.0 if max(a, b) == 0 else (b - a) / max(a, b)
    return float(s.mean())


# -- file formats --------------------------------------------------------------

def write_embeddings_csv(path, ids, emb, labels=None) -> Path:
    emb = np.asarray(emb)
    head = ["id"] + ([] if labels is None else ["label"])
    labels = [[]] * len(emb) if labels is None else [[lab] for lab in labels]
    return write_csv(path, head + [f"e{k}" for k in range(emb.shape[1])],
                     [[i] + lab + [repr(float(v)) for v in row] for i, lab, row in zip(ids, labels, emb)])


def read_embeddings_csv(path):
    """``(ids, embedding, labels)``; labels is None when the file has no label column."""
    header, rows = read_csv(path)
    start = 2 if header[1:2] == ["label"] else 1
    emb = np.array([[float(v) for v in r[start:]] for r in rows]).reshape(len(rows), len(header) - start)
    return [r[0] for r in rows], emb, ([r[1] for r in rows] if start == 2 else None)


def write_tsne_csv(path, ids, coords, labels) -> Path:
    return write_csv(path, ["id", "x", "y", "label"],
                     [[i, repr(float(c[0])), repr(float(c[1])), lab] for i, c, lab in zip(ids, coords, labels)])


def tsne_svg(coords, labels, class_names, size: int = 600, radius: float = 3.0) -> str:
    """Scatter plot of 2-D coordinates coloured by class, with a legend."""
    coords = np.asarray(coords, dtype=np.float64)
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    pad = 20.0
    xy = pad + (coords - lo) / span * (size - 2 * pad)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size + 120}" height="{size}">',
             f'<rect width="{size + 120}" height="{size}" fill="white"/>']
    for (x, y), lab in zip(xy, labels):
        r, g, b = PALETTE[class_names.index(lab)] if lab in class_names else (128, 128, 128)
        parts.append(f'<circle cx="{x:.2f}" cy="{size - y:.2f}" r="{radius}" fill="rgb({r},{g},{b})"/>')
    for k, name in enumerate(class_names):
        r, g, b = PALETTE[k]
        parts.append(f'<circle cx="{size + 20}" cy="{30 + 20 * k}" r="5" fill="rgb({r},{g},{b})"/>')
        parts.append(f'<text x="{size + 32}" y="{35 + 20 * k}" font-size="14">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
