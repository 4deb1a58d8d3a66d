"""Synthetic-data quality: train-on-synthetic/test-on-real and the latent t-SNE audit."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import AdamConfig, ModelCheckpoint, Network, Tensor, adam_step, backward, no_grad, sigmoid
from .autodiff.tensor import DimensionError, mean, mul
from .classifier import TrainConfig, build_proposed_cnn, evaluate, train_classifier
from .generative import synthetic_dataset, vae_encoder_layers
from .spectrogram import INDEX_LABEL, SpectrogramDataset
from .tsne import TsneConfig, tsne_embed

log = logging.getLogger(__name__)

LATENT_DIM = 1024
ORIGINS = ("real", "vae", "wgan")


@dataclass
class LatentPoint:
    vector: np.ndarray
    origin: str
    label: str

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if self.vector.shape != (LATENT_DIM,):
            raise DimensionError(f"latent vectors must have {LATENT_DIM} entries, got {self.vector.shape}")
        if self.origin not in ORIGINS:
            raise ValueError(f"unknown origin {self.origin!r}")


# ---------------------------------------------------------------------------
# train on synthetic, test on real
# ---------------------------------------------------------------------------

def _require_real(test_set: SpectrogramDataset):
    bad = [k for k, o in zip(test_set.keys, test_set.origins) if o != "real"]
    if bad:
        raise ValueError(f"test set contains {len(bad)} synthetic items, e.g. {bad[:3]}")
    if len(test_set) == 0:
        raise ValueError("test set is empty")


def synthetic_training_set(ckpts: dict[str, ModelCheckpoint], per_class: int, seed: int) -> SpectrogramDataset:
    """Sample ``per_class`` items from each class checkpoint (keys are class labels)."""
    if per_class <= 0:
        raise ValueError(f"synthetic training set would be empty (per_class={per_class})")
    parts = None
    for i, label in enumerate(sorted(ckpts)):
        part = synthetic_dataset(ckpts[label], per_class, label, seed + 1000 * i)
        parts = part if parts is None else parts.concat(part)
    if parts is None or len(parts) == 0:
        raise ValueError("no generative checkpoints supplied")
    return parts


def train_on_synthetic_protocol(generators: dict[str, dict[str, ModelCheckpoint]], real_test_set: SpectrogramDataset,
                                seed: int = 0, per_class: int = 600, train_cfg: TrainConfig | None = None,
                                build_model=build_proposed_cnn) -> dict[str, dict]:
    """Train one CNN per generative model on its samples alone and score it on real test data.

    ``generators`` maps a model name (``"vae"``, ``"wgan"``) to its per-class checkpoints.
    """
    _require_real(real_test_set)
    cfg = train_cfg or TrainConfig(learning_rate=1e-5, epochs=300, seed=seed)
    results = {}
    for name in sorted(generators):
        train = synthetic_training_set(generators[name], per_class, seed)
        model = build_model(seed=seed)
        model, history = train_classifier(model, train, cfg)
        loss, acc = evaluate(model, real_test_set)
        results[name] = {"accuracy": acc, "loss": loss, "train_size": len(train),
                         "epochs": len(history.epochs), "history": history.epochs}
        log.info("train-on-synthetic %s: acc %.4f loss %.4f", name, acc, loss)
    return results


# ---------------------------------------------------------------------------
# latent autoencoder
# ---------------------------------------------------------------------------

def latent_encoder_layers(filters=(64, 128, 256, 512, 1024)) -> list[dict]:
    layers = vae_encoder_layers(filters, hidden=())
    layers.append({"type": "dense", "units": LATENT_DIM})
    return layers


def latent_decoder_layers(data_shape, filters=(64, 128, 256, 512, 1024)) -> list[dict]:
    """Mirror of the encoder: dense to the encoder's final feature map, then transposed convs back up."""
    depth = len(filters)
    h, w, c = data_shape
    seed = (-(-h // 2**depth), -(-w // 2**depth), filters[-1])
    layers = [{"type": "dense", "units": int(np.prod(seed)), "activation": "relu"},
              {"type": "reshape", "shape": list(seed)}]
    layers += [{"type": "conv2d_transpose", "filters": f, "kernel": [5, 5], "stride": [2, 2], "activation": "relu"}
               for f in reversed(filters[:-1])]
    layers.append({"type": "conv2d_transpose", "filters": c, "kernel": [5, 5], "stride": [2, 2]})
    return layers


@dataclass
class LatentAutoencoder:
    encoder: Network
    decoder: Network
    history: list[dict] = field(default_factory=list)

    def encode(self, x, batch_size: int = 64) -> np.ndarray:
        x = _with_channel(x, self.encoder)
        out = []
        with no_grad():
            for s in range(0, len(x), batch_size):
                out.append(self.encoder(Tensor(x[s:s + batch_size]), training=False).data)
        return np.concatenate(out).astype(np.float64) if out else np.zeros((0, LATENT_DIM))

    def reconstruct(self, x, batch_size: int = 64) -> np.ndarray:
        x = _with_channel(x, self.encoder)
        out = []
        with no_grad():
            for s in range(0, len(x), batch_size):
                z = self.encoder(Tensor(x[s:s + batch_size]), training=False)
                out.append(sigmoid(self.decoder(z, training=False)).data)
        return np.concatenate(out).reshape(x.shape)

    def latent_points(self, data: SpectrogramDataset) -> list[LatentPoint]:
        z = self.encode(data.native)
        return [LatentPoint(v, o, INDEX_LABEL[int(lbl)]) for v, o, lbl in zip(z, data.origins, data.labels)]


def _with_channel(x, net: Network) -> np.ndarray:
    x = np.asarray(x, dtype=net.dtype)
    if x.ndim == len(net.input_shape):
        x = x[..., None]
    if x.shape[1:] != net.input_shape:
        raise DimensionError(f"expected (N, {net.input_shape}) inputs, got {x.shape}")
    return x


def reconstruction_mse(ae: LatentAutoencoder, x) -> float:
    x = _with_channel(x, ae.encoder)
    return float(np.mean((ae.reconstruct(x).astype(np.float64) - x) ** 2))


def fit_latent_autoencoder(real_train_set, seed: int = 0, epochs: int = 50, batch_size: int = 32,
                           learning_rate: float = 1e-4, filters=(64, 128, 256, 512, 1024), dtype=np.float32,
                           progress=None) -> LatentAutoencoder:
    """Train a plain autoencoder with a 1024-unit linear bottleneck on real native spectrograms (MSE loss)."""
    if isinstance(real_train_set, SpectrogramDataset):
        if any(o != "real" for o in real_train_set.origins):
            raise ValueError("the audit autoencoder is trained on real data only")
        x = real_train_set.native
    else:
        x = np.asarray(real_train_set)
    if x.ndim == 3:
        x = x[..., None]
    if len(x) == 0:
        raise ValueError("autoencoder training set is empty")
    shape = x.shape[1:]
    enc = Network(latent_encoder_layers(filters), shape, seed=seed, dtype=dtype, name="audit.encoder")
    dec = Network(latent_decoder_layers(shape, filters), (LATENT_DIM,), seed=seed + 1, dtype=dtype,
                  name="audit.decoder")
    if dec.output_shape != shape:
        raise DimensionError(f"decoder output {dec.output_shape} does not mirror input {shape}")
    ae = LatentAutoencoder(enc, dec)
    x = x.astype(dtype)
    rng = np.random.default_rng(seed)
    params = enc.parameters() + dec.parameters()
    opt = AdamConfig(learning_rate)
    for epoch in range(1, epochs + 1):
        total = 0.0
        perm = rng.permutation(len(x))
        for s in range(0, len(x), batch_size):
            idx = perm[s:s + batch_size]
            recon = sigmoid(dec(enc(Tensor(x[idx]), training=True), training=True))
            diff = recon - Tensor(x[idx])
            loss = mean(mul(diff, diff))
            backward(loss)
            adam_step(params, opt)
            total += loss.item() * len(idx)
        row = {"epoch": epoch, "mse": total / len(x)}
        ae.history.append(row)
        if progress:
            progress(row)
    return ae


# ---------------------------------------------------------------------------
# audit
# ---------------------------------------------------------------------------

def overlap_score(points: np.ndarray, is_reference: np.ndarray) -> float:
    """How well a point set mixes with the reference set, from leave-one-out 1-NN labels.

    1.0 means nearest neighbours are no better than chance at telling the two sets apart;
    0.0 means the sets are perfectly separated.
    """
    x = np.asarray(points, dtype=np.float64)
    ref = np.asarray(is_reference, dtype=bool)
    if ref.all() or not ref.any():
        raise ValueError("overlap needs both reference and candidate points")
    sq = np.sum(x * x, axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * x @ x.T
    np.fill_diagonal(d, np.inf)
    nn = np.argmin(d, axis=1)
    # balanced accuracy so unequal set sizes do not bias the score
    acc = 0.5 * (np.mean(ref[nn][ref]) + np.mean(~ref[nn][~ref]))
    return float(np.clip(2.0 * (1.0 - acc), 0.0, 1.0))


@dataclass
class AuditResult:
    coords: np.ndarray
    origins: list[str]
    labels: list[str]
    kl_history: list[tuple[int, float]]
    overlap: dict[str, float]

    def to_dict(self) -> dict:
        return {"overlap": self.overlap, "n_points": len(self.origins),
                "kl_initial": self.kl_history[0][1], "kl_final": self.kl_history[-1][1]}


def latent_audit(ae: LatentAutoencoder, real: SpectrogramDataset, synthetic: dict[str, SpectrogramDataset],
                 cfg: TsneConfig = TsneConfig()) -> AuditResult:
    """Embed real and synthetic latents jointly in 3-d and score how much each synthetic set overlaps real."""
    pts = ae.latent_points(real)
    for name in sorted(synthetic):
        pts += ae.latent_points(synthetic[name])
    z = np.stack([p.vector for p in pts])
    origins = [p.origin for p in pts]
    coords, hist = tsne_embed(z, cfg)
    is_real = np.array([o == "real" for o in origins])
    overlap = {}
    for name in sorted(synthetic):
        sel = is_real | (np.array(origins) == name)
        overlap[name] = overlap_score(coords[sel], is_real[sel])
        overlap[name + "_latent"] = overlap_score(z[sel], is_real[sel])
    return AuditResult(coords, origins, [p.label for p in pts], hist, overlap)


def write_embedding_csv(result: AuditResult, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z", "origin", "label"])
        for (x, y, z), o, lbl in zip(result.coords, result.origins, result.labels):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(z)), o, lbl])
    return path
