"""Exact t-SNE with per-point perplexity calibration."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


class PerplexityCalibrationError(ValueError):
    def __init__(self, rows):
        self.rows = list(rows)
        shown = ", ".join(map(str, self.rows[:20]))
        more = "" if len(self.rows) <= 20 else f" (+{len(self.rows) - 20} more)"
        super().__init__(f"perplexity calibration failed for rows with duplicate points: {shown}{more}")


@dataclass
class TsneConfig:
    output_dim: int = 3
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float = 200.0
    early_exaggeration: float = 12.0
    exaggeration_iters: int = 250
    seed: int = 0
    init_scale: float = 1e-4
    entropy_tol: float = 1e-5
    record_every: int = 1


def squared_distances(x: np.ndarray) -> np.ndarray:
    sq = np.sum(x * x, axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def _row_entropy(d_row: np.ndarray, beta: float) -> tuple[float, np.ndarray]:
    shifted = d_row - d_row.min()
    p = np.exp(-shifted * beta)
    total = p.sum()
    p /= total
    # H = log(sum e^{-beta d}) + beta * <d>, both measured from the shifted distances
    h = np.log(total) + beta * np.sum(shifted * p)
    return h, p


def conditional_probabilities(d2: np.ndarray, perplexity: float, tol: float = 1e-5,
                              max_iter: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Row-stochastic P(j|i) whose entropies equal log(perplexity); also returns the entropies."""
    n = d2.shape[0]
    target = np.log(perplexity)
    p = np.zeros((n, n))
    entropies = np.zeros(n)
    failed = []
    for i in range(n):
        row = np.delete(d2[i], i)
        beta, lo, hi = 1.0 / max(np.median(row), 1e-12), 0.0, np.inf
        h, pi = _row_entropy(row, beta)
        for _ in range(max_iter):
            diff = h - target
            if abs(diff) <= tol:
                break
            if diff > 0:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = (beta + lo) / 2.0
            h, pi = _row_entropy(row, beta)
        if abs(h - target) > tol:
            if np.any(row <= 1e-12):
                failed.append(i)
            elif np.ptp(row) > 1e-12 * max(row.max(), 1.0):
                log.warning("row %d: entropy %.6f could not reach %.6f", i, h, target)
            # equidistant rows have a beta-independent uniform distribution; keep it
        p[i, np.arange(n) != i] = pi
        entropies[i] = h
    if failed:
        raise PerplexityCalibrationError(failed)
    return p, entropies


def joint_probabilities(x: np.ndarray, perplexity: float, tol: float = 1e-5) -> np.ndarray:
    cond, _ = conditional_probabilities(squared_distances(np.asarray(x, dtype=np.float64)), perplexity, tol)
    p = (cond + cond.T) / (2.0 * len(x))
    return np.maximum(p, 1e-12)


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    mask = ~np.eye(len(p), dtype=bool)
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def _q_matrix(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    num = 1.0 / (1.0 + squared_distances(y))
    np.fill_diagonal(num, 0.0)
    q = np.maximum(num / num.sum(), 1e-12)
    return q, num


def tsne_embed(points, cfg: TsneConfig = TsneConfig()) -> tuple[np.ndarray, list[tuple[int, float]]]:
    """Embed ``points`` (n, d) into ``cfg.output_dim`` dims; returns coordinates and (iteration, KL) history."""
    x = np.asarray(points, dtype=np.float64)
    n = len(x)
    if n < 10:
        raise ValueError(f"t-SNE needs at least 10 points, got {n}")
    if not cfg.perplexity < (n - 1) / 3:
        raise ValueError(f"perplexity {cfg.perplexity} must be < (n-1)/3 = {(n - 1) / 3:.2f}")
    p = joint_probabilities(x, cfg.perplexity, cfg.entropy_tol)
    rng = np.random.default_rng(cfg.seed)
    y = rng.standard_normal((n, cfg.output_dim)) * cfg.init_scale
    velocity = np.zeros_like(y)
    gains = np.ones_like(y)
    history = [(0, _kl(p, _q_matrix(y)[0]))]
    for it in range(1, cfg.iterations + 1):
        exaggerate = it <= cfg.exaggeration_iters
        pe = p * cfg.early_exaggeration if exaggerate else p
        q, num = _q_matrix(y)
        w = (pe - q) * num
        grad = 4.0 * (np.sum(w, axis=1)[:, None] * y - w @ y)
        momentum = 0.5 if exaggerate else 0.8
        same_sign = np.sign(grad) == np.sign(velocity)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        velocity = momentum * velocity - cfg.learning_rate * gains * grad
        y = y + velocity
        y -= y.mean(axis=0)
        if it % cfg.record_every == 0 or it == cfg.iterations:
            kl = _kl(p, _q_matrix(y)[0])
            if not np.isfinite(kl):
                raise FloatingPointError(f"t-SNE KL became non-finite at iteration {it}")
            history.append((it, kl))
    return y, history


def silhouette(y: np.ndarray, labels) -> float:
    from sklearn.metrics import silhouette_score

    return float(silhouette_score(y, labels))
