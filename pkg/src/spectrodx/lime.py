"""Superpixel perturbation explanations with a weighted ridge surrogate."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from sklearn.linear_model import Ridge

IMAGE_SIZE = 128


@dataclass
class SuperpixelMap:
    labels: np.ndarray  # (H, W) ints in [0, n_segments)
    n_segments: int


@dataclass
class SurrogateConfig:
    num_samples: int = 1000
    kernel_width: float = 0.25
    ridge_alpha: float = 1.0
    replacement: str = "mean"  # or "zero"
    seed: int = 0
    batch_size: int = 100


@dataclass
class Explanation:
    weights: np.ndarray
    intercept: float
    fidelity: float
    target_class: int
    config: SurrogateConfig

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "intercept": self.intercept, "fidelity": self.fidelity,
                "target_class": self.target_class, "config": asdict(self.config)}


def grid_segment(image_or_shape, cell: int = 16) -> SuperpixelMap:
    """Square ``cell`` x ``cell`` superpixels numbered row-major."""
    shape = image_or_shape.shape[:2] if hasattr(image_or_shape, "shape") else tuple(image_or_shape)
    h, w = shape
    if cell <= 0 or h % cell or w % cell:
        raise ValueError(f"cell {cell} must divide the image size {h}x{w}")
    rows, cols = np.indices((h, w))
    per_row = w // cell
    labels = (rows // cell) * per_row + cols // cell
    return SuperpixelMap(labels, (h // cell) * per_row)


def _check_probs(p: np.ndarray, n: int) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] != n:
        raise ValueError(f"predict function must return (N, classes) rows, got {p.shape}")
    if np.any(p < -1e-9) or np.any(p > 1 + 1e-9) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-4):
        raise ValueError("predict function must return class-probability rows")
    return p


def perturb(image: np.ndarray, segmap: SuperpixelMap, masks: np.ndarray, replacement: str = "mean") -> np.ndarray:
    """Images with every superpixel whose mask entry is 0 replaced by the fill value."""
    if replacement == "mean":
        fill = float(image.mean())
    elif replacement == "zero":
        fill = 0.0
    else:
        raise ValueError(f"unknown replacement policy {replacement!r}")
    keep = masks[:, segmap.labels]  # (N, H, W)
    return np.where(keep.astype(bool), image[None], fill)


def explain_instance(predict_fn: Callable[[np.ndarray], np.ndarray], image: np.ndarray, segmap: SuperpixelMap,
                     cfg: SurrogateConfig = SurrogateConfig(), target_class: int | None = None) -> Explanation:
    """Fit a locally weighted linear model from superpixel on/off masks to one class probability."""
    s = segmap.n_segments
    if cfg.num_samples < s:
        raise ValueError(f"num_samples {cfg.num_samples} must be >= number of superpixels {s}")
    if cfg.kernel_width <= 0 or cfg.ridge_alpha < 0:
        raise ValueError("kernel_width must be > 0 and ridge_alpha >= 0")
    image = np.asarray(image, dtype=np.float64)
    rng = np.random.default_rng(cfg.seed)
    masks = rng.integers(0, 2, size=(cfg.num_samples, s)).astype(np.float64)
    masks[0] = 1.0
    probs = []
    for start in range(0, cfg.num_samples, cfg.batch_size):
        chunk = masks[start:start + cfg.batch_size]
        probs.append(_check_probs(predict_fn(perturb(image, segmap, chunk, cfg.replacement)), len(chunk)))
    probs = np.concatenate(probs)
    if target_class is None:
        target_class = int(np.argmax(probs[0]))
    y = probs[:, target_class]

    kept = masks.sum(axis=1)
    cos = np.where(kept > 0, kept / (np.sqrt(np.maximum(kept, 1e-12)) * np.sqrt(s)), 0.0)
    dist = 1.0 - cos
    sample_w = np.exp(-(dist**2) / cfg.kernel_width**2)

    ridge = Ridge(alpha=cfg.ridge_alpha, fit_intercept=True)
    ridge.fit(masks, y, sample_weight=sample_w)
    fidelity = float(ridge.score(masks, y, sample_weight=sample_w)) if np.ptp(y) > 0 else 1.0
    return Explanation(ridge.coef_.astype(np.float64), float(ridge.intercept_), fidelity, target_class, cfg)


def render_heatmap(expl: Explanation, segmap: SuperpixelMap, path=None) -> np.ndarray:
    """Per-pixel |weight| of its superpixel, min-max scaled (all-equal weights give zeros)."""
    mag = np.abs(expl.weights)
    lo, hi = mag.min(), mag.max()
    scaled = np.zeros_like(mag) if hi - lo <= 0 else (mag - lo) / (hi - lo)
    heat = scaled[segmap.labels]
    if path is not None:
        from PIL import Image

        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray((heat * 255).round().astype(np.uint8), mode="L").save(path)
        path.with_suffix(".json").write_text(json.dumps(expl.to_dict(), indent=2))
    return heat
