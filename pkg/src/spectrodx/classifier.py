"""The compact spectrogram CNN: construction, training and prediction."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff import AdamConfig, Network, Tensor, adam_step, backward, no_grad, softmax, softmax_cross_entropy
from .autodiff.tensor import DimensionError
from .spectrogram import SpectrogramDataset

log = logging.getLogger(__name__)

CLASS_NAMES = ("norm", "sch")
INPUT_SHAPE = (128, 128, 1)
PROPOSED_PARAM_COUNT = 1_289_218


def proposed_cnn_layers() -> list[dict]:
    layers = []
    for filters in (32, 64, 128, 128):
        layers.append({"type": "conv2d", "filters": filters, "kernel": [3, 3], "stride": [1, 1],
                       "padding": "same", "activation": "relu"})
        layers.append({"type": "max_pool", "size": 2})
    layers += [
        {"type": "flatten"},
        {"type": "dense", "units": 128, "activation": "relu"},
        {"type": "dense", "units": 2},
    ]
    return layers


@dataclass
class CnnClassifier:
    network: Network
    class_names: tuple[str, ...] = CLASS_NAMES

    @property
    def parameter_count(self) -> int:
        return self.network.num_params()

    def parameters(self):
        return self.network.parameters()


def build_proposed_cnn(seed: int = 0, dtype=np.float32, layers: list[dict] | None = None,
                       input_shape=INPUT_SHAPE) -> CnnClassifier:
    net = Network(layers or proposed_cnn_layers(), input_shape, seed=seed, dtype=dtype, name="cnn")
    if net.output_shape != (2,):
        raise DimensionError(f"classifier must end in 2 logits, got {net.output_shape}")
    return CnnClassifier(net)


@dataclass
class TrainConfig:
    learning_rate: float = 8e-5
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    # stop once train accuracy is 1.0 and loss improved < tol over `patience` epochs
    until_converged: bool = False
    convergence_tol: float = 1e-4
    convergence_patience: int = 10

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")

    @property
    def optimizer(self) -> AdamConfig:
        return AdamConfig(self.learning_rate, self.beta1, self.beta2, self.epsilon)


@dataclass
class TrainHistory:
    epochs: list[dict] = field(default_factory=list)

    def append(self, **row):
        self.epochs.append(row)

    @property
    def final(self) -> dict:
        return self.epochs[-1] if self.epochs else {}

    def to_csv(self, path):
        cols = ["epoch", "train_loss", "train_acc", "test_loss", "test_acc"]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row in self.epochs:
                fh.write(",".join("" if row.get(c) is None else repr(row[c]) for c in cols) + "\n")


def _as_arrays(data) -> tuple[np.ndarray, np.ndarray, list[str] | None]:
    if isinstance(data, SpectrogramDataset):
        return data.classifier, data.labels, data.keys
    x, y = data
    return np.asarray(x), np.asarray(y, dtype=np.int64), None


def _to_input(x: np.ndarray, model: CnnClassifier) -> np.ndarray:
    shape = model.network.input_shape
    x = np.asarray(x, dtype=model.network.dtype)
    if x.ndim == len(shape):
        x = x[..., None]
    if x.shape[1:] != shape:
        raise DimensionError(f"classifier expects (N, {shape[:-1]}) inputs, got {x.shape}")
    return x


def evaluate(model: CnnClassifier, data, batch_size: int = 64) -> tuple[float, float]:
    """Mean cross-entropy and accuracy on a dataset."""
    x, y, _ = _as_arrays(data)
    if len(y) == 0:
        return float("nan"), float("nan")
    probs = predict(model, x, batch_size)
    p = np.clip(probs[np.arange(len(y)), y], 1e-12, 1.0)
    return float(-np.log(p).mean()), float((probs.argmax(axis=1) == y).mean())


def train_classifier(model: CnnClassifier, data, cfg: TrainConfig, test_data=None,
                     progress=None) -> tuple[CnnClassifier, TrainHistory]:
    """Mini-batch Adam on softmax cross-entropy; one history row per epoch."""
    x, y, keys = _as_arrays(data)
    if len(y) == 0:
        raise ValueError("training set is empty")
    if len(np.unique(y)) < 2:
        raise ValueError("training set must contain both classes")
    if keys is not None:
        # canonical order so the result does not depend on how the caller ordered items
        order = np.argsort(np.asarray(keys), kind="stable")
        x, y = x[order], y[order]
    x = _to_input(x, model)
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    opt = cfg.optimizer
    history = TrainHistory()
    best_loss = np.inf
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(len(y))
        total_loss, correct = 0.0, 0
        for start in range(0, len(y), cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            logits = model.network(Tensor(x[idx]), training=True, rng=rng)
            loss = softmax_cross_entropy(logits, y[idx])
            backward(loss)
            adam_step(params, opt)
            total_loss += loss.item() * len(idx)
            correct += int((logits.data.argmax(axis=1) == y[idx]).sum())
        row = {"epoch": epoch, "train_loss": total_loss / len(y), "train_acc": correct / len(y),
               "test_loss": None, "test_acc": None}
        if test_data is not None:
            row["test_loss"], row["test_acc"] = evaluate(model, test_data)
        history.append(**row)
        if progress is not None:
            progress(row)
        log.debug("epoch %d: %s", epoch, row)
        if cfg.until_converged:
            if row["train_loss"] < best_loss - cfg.convergence_tol:
                best_loss, stale = row["train_loss"], 0
            else:
                stale += 1
            if row["train_acc"] >= 1.0 and stale >= cfg.convergence_patience:
                break
    return model, history


def predict(model: CnnClassifier, x, batch_size: int = 64) -> np.ndarray:
    """Class probabilities (N, 2) in eval mode."""
    x = _to_input(x, model)
    out = []
    with no_grad():
        for start in range(0, len(x), batch_size):
            logits = model.network(Tensor(x[start:start + batch_size]), training=False)
            out.append(softmax(logits.data.astype(np.float64)))
    if not out:
        return np.zeros((0, 2))
    return np.concatenate(out)
