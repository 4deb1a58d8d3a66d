"""Per-class VAE and WGAN-GP models for native-size spectrograms."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import (
    AdamConfig,
    ModelCheckpoint,
    Network,
    Tensor,
    adam_step,
    backward,
    bce_with_logits_sum,
    input_gradient_norm,
    no_grad,
    sigmoid,
    zero_grad,
)
from .autodiff.tensor import DimensionError, exp, mean, mul, sum_
from .spectrogram import LABEL_INDEX, Spectrogram, SpectrogramDataset

log = logging.getLogger(__name__)

NATIVE_SHAPE = (512, 32, 1)
NOISE_DIM = 128
VAE_LATENT = 512


# ---------------------------------------------------------------------------
# architectures
# ---------------------------------------------------------------------------

def critic_layers(filters=(32, 64, 128, 256, 512), dropout: float = 0.3) -> list[dict]:
    layers = []
    for f in filters:
        layers.append({"type": "conv2d", "filters": f, "kernel": [5, 5], "stride": [2, 2], "padding": "same",
                       "activation": "leaky_relu", "alpha": 0.2})
        if dropout:
            layers.append({"type": "dropout", "rate": dropout})
    layers += [{"type": "flatten"}, {"type": "dense", "units": 1}]
    return layers


def generator_layers(filters=(256, 128, 64, 32, 1), seed_shape=(16, 1, 512), upsample: str = "transpose",
                     output_dropout: float = 0.0) -> list[dict]:
    """Dense projection, reshape, then five x2 upsampling convs ending in tanh.

    ``upsample="transpose"`` uses stride-2 transposed convolutions;
    ``"nearest"`` uses nearest-neighbour upsampling plus a stride-1 conv.
    """
    kind = {"transpose": "conv2d_transpose", "nearest": "upsample_conv"}[upsample]
    layers = [
        {"type": "dense", "units": int(np.prod(seed_shape)), "activation": "leaky_relu", "alpha": 0.2},
        {"type": "reshape", "shape": list(seed_shape)},
    ]
    for i, f in enumerate(filters):
        last = i == len(filters) - 1
        layers.append({"type": kind, "filters": f, "kernel": [3, 3], "stride": [2, 2]})
        if last:
            layers.append({"type": "activation", "activation": "tanh"})
            if output_dropout:
                layers.append({"type": "dropout", "rate": output_dropout})
        else:
            layers.append({"type": "batch_norm"})
            layers.append({"type": "activation", "activation": "leaky_relu", "alpha": 0.2})
    return layers


def vae_encoder_layers(filters=(64, 128, 256, 512, 1024), hidden=(1024, 1024)) -> list[dict]:
    layers = [{"type": "conv2d", "filters": f, "kernel": [5, 5], "stride": [2, 2], "padding": "same",
               "activation": "relu"} for f in filters]
    layers.append({"type": "flatten"})
    layers += [{"type": "dense", "units": h, "activation": "relu"} for h in hidden]
    return layers


def vae_decoder_layers(filters=(512, 256, 128, 64), hidden=(1024, 1024), seed_shape=(16, 1, 1024),
                       out_channels: int = 1) -> list[dict]:
    """Decoder emitting logits; the sigmoid lives in the loss / ``decode``."""
    layers = [{"type": "dense", "units": h, "activation": "relu"} for h in hidden]
    layers.append({"type": "dense", "units": int(np.prod(seed_shape)), "activation": "relu"})
    layers.append({"type": "reshape", "shape": list(seed_shape)})
    layers += [{"type": "conv2d_transpose", "filters": f, "kernel": [5, 5], "stride": [2, 2], "activation": "relu"}
               for f in filters]
    layers.append({"type": "conv2d_transpose", "filters": out_channels, "kernel": [3, 3], "stride": [2, 2]})
    return layers


@dataclass
class VaeModel:
    encoder: Network
    mu_head: Network
    logvar_head: Network
    decoder: Network

    @property
    def latent_dim(self) -> int:
        return self.mu_head.output_shape[0]

    @property
    def data_shape(self) -> tuple[int, ...]:
        return self.encoder.input_shape

    def networks(self) -> dict[str, Network]:
        return {"encoder": self.encoder, "mu_head": self.mu_head, "logvar_head": self.logvar_head,
                "decoder": self.decoder}

    def parameters(self):
        return [p for n in self.networks().values() for p in n.parameters()]

    def encode(self, x) -> tuple[Tensor, Tensor]:
        h = self.encoder(x, training=True)
        return self.mu_head(h, training=True), self.logvar_head(h, training=True)

    def decode_logits(self, z) -> Tensor:
        return self.decoder(z, training=True)

    def decode(self, z) -> np.ndarray:
        with no_grad():
            return sigmoid(self.decoder(z, training=False)).data


def build_vae(seed: int = 0, dtype=np.float32, data_shape=NATIVE_SHAPE, latent_dim: int = VAE_LATENT,
              encoder: list[dict] | None = None, decoder: list[dict] | None = None) -> VaeModel:
    enc = Network(encoder or vae_encoder_layers(), data_shape, seed=seed, dtype=dtype, name="vae.encoder")
    if len(enc.output_shape) != 1:
        raise DimensionError(f"encoder must end flat, got {enc.output_shape}")
    head = [{"type": "dense", "units": latent_dim}]
    mu = Network(head, enc.output_shape, seed=seed + 1, dtype=dtype, name="vae.mu")
    lv = Network(head, enc.output_shape, seed=seed + 2, dtype=dtype, name="vae.logvar")
    dec = Network(decoder or vae_decoder_layers(), (latent_dim,), seed=seed + 3, dtype=dtype, name="vae.decoder")
    if dec.output_shape != tuple(data_shape):
        raise DimensionError(f"decoder output {dec.output_shape} does not match data {data_shape}")
    return VaeModel(enc, mu, lv, dec)


@dataclass
class WganModel:
    generator: Network
    critic: Network

    @property
    def noise_dim(self) -> int:
        return self.generator.input_shape[0]

    def networks(self) -> dict[str, Network]:
        return {"generator": self.generator, "critic": self.critic}


def build_wgan(seed: int = 0, dtype=np.float32, data_shape=NATIVE_SHAPE, noise_dim: int = NOISE_DIM,
               generator: list[dict] | None = None, critic: list[dict] | None = None,
               upsample: str = "transpose", output_dropout: float = 0.0) -> WganModel:
    gen = Network(generator or generator_layers(upsample=upsample, output_dropout=output_dropout), (noise_dim,),
                  seed=seed, dtype=dtype, name="wgan.generator")
    crit = Network(critic or critic_layers(), data_shape, seed=seed + 1, dtype=dtype, name="wgan.critic")
    if gen.output_shape != tuple(data_shape):
        raise DimensionError(f"generator output {gen.output_shape} does not match data {data_shape}")
    if crit.output_shape != (1,):
        raise DimensionError(f"critic must output one score per sample, got {crit.output_shape}")
    return WganModel(gen, crit)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def kl_divergence(mu: Tensor, logvar: Tensor) -> Tensor:
    """Batch mean of KL(N(mu, exp(logvar)) || N(0, I))."""
    per_dim = 1.0 + logvar - mul(mu, mu) - exp(logvar)
    return mul(mean(sum_(per_dim, axis=1)), -0.5)


def vae_elbo_loss(model: VaeModel, batch, rng: np.random.Generator | None = None,
                  eps: np.ndarray | None = None) -> tuple[Tensor, Tensor, Tensor]:
    """(loss, reconstruction BCE, KL) for one batch in [0, 1]; pass ``eps`` to fix the noise."""
    x = np.asarray(batch.data if isinstance(batch, Tensor) else batch, dtype=model.encoder.dtype)
    if x.min(initial=0.0) < 0.0 or x.max(initial=0.0) > 1.0:
        raise ValueError("VAE batch values must lie in [0, 1]")
    mu, logvar = model.encode(Tensor(x))
    if eps is None:
        if rng is None:
            raise ValueError("vae_elbo_loss needs rng or eps")
        eps = rng.standard_normal(mu.shape)
    z = mu + mul(exp(mul(logvar, 0.5)), Tensor(np.asarray(eps, dtype=mu.dtype)))
    logits = model.decode_logits(z)
    recon = mean(bce_with_logits_sum(logits, x))
    kl = kl_divergence(mu, logvar)
    return recon + kl, recon, kl


@dataclass
class GpConfig:
    lambda_gp: float = 10.0
    n_critic: int = 3
    beta1: float = 0.0
    beta2: float = 0.9

    def __post_init__(self):
        if self.lambda_gp <= 0:
            raise ValueError("lambda_gp must be > 0")
        if self.n_critic < 1:
            raise ValueError("n_critic must be >= 1")


def critic_loss_with_gp(model: WganModel, real, fake, rng: np.random.Generator, cfg: GpConfig = GpConfig(),
                        training: bool = True) -> tuple[Tensor, dict]:
    """mean D(fake) - mean D(real) + lambda * mean (||grad D(x_hat)|| - 1)^2 on random interpolates."""
    dt = model.critic.dtype
    real = np.asarray(real.data if isinstance(real, Tensor) else real, dtype=dt)
    fake = np.asarray(fake.data if isinstance(fake, Tensor) else fake, dtype=dt)
    if real.shape != fake.shape:
        raise DimensionError(f"real batch {real.shape} and fake batch {fake.shape} differ")
    n = real.shape[0]
    e = rng.uniform(0.0, 1.0, size=(n,) + (1,) * (real.ndim - 1)).astype(dt)
    x_hat = e * real + (1.0 - e) * fake
    d_real = model.critic(Tensor(real), training=training, rng=rng)
    d_fake = model.critic(Tensor(fake), training=training, rng=rng)
    norms = input_gradient_norm(model.critic, x_hat)
    penalty = mean((norms - 1.0) ** 2)
    w_est = mean(d_real) - mean(d_fake)
    loss = -w_est + mul(penalty, cfg.lambda_gp)
    return loss, {"wasserstein": w_est.item(), "gp": penalty.item(), "critic_loss": loss.item()}


def generator_loss(model: WganModel, noise, rng: np.random.Generator | None = None,
                   training: bool = True) -> Tensor:
    """-mean D(G(z)), differentiable through the generator."""
    z = noise if isinstance(noise, Tensor) else Tensor(np.asarray(noise, dtype=model.generator.dtype))
    fake = model.generator(z, training=training, rng=rng)
    return -mean(model.critic(fake, training=training, rng=rng))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class GenerativeSchedule:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 8e-5
    beta1: float = 0.9
    beta2: float = 0.999
    gp: GpConfig = field(default_factory=GpConfig)

    @classmethod
    def vae_default(cls, epochs: int = 6000) -> GenerativeSchedule:
        return cls(epochs=epochs, batch_size=32, learning_rate=8e-5)

    @classmethod
    def wgan_default(cls, epochs: int = 2000) -> GenerativeSchedule:
        return cls(epochs=epochs, batch_size=32, learning_rate=1e-4, beta1=0.0, beta2=0.9)

    def adam(self) -> AdamConfig:
        return AdamConfig(self.learning_rate, self.beta1, self.beta2)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def train_vae(model: VaeModel, data: np.ndarray, schedule: GenerativeSchedule, seed: int = 0,
              progress=None) -> list[dict]:
    data = np.asarray(data, dtype=model.encoder.dtype)
    if data.shape[1:] != model.data_shape:
        data = data.reshape((len(data),) + model.data_shape)
    rng = np.random.default_rng(seed)
    params = model.parameters()
    opt = schedule.adam()
    history = []
    for epoch in range(1, schedule.epochs + 1):
        totals = np.zeros(3)
        for idx in _batches(len(data), schedule.batch_size, rng):
            loss, recon, kl = vae_elbo_loss(model, data[idx], rng)
            backward(loss)
            adam_step(params, opt)
            totals += np.array([loss.item(), recon.item(), kl.item()]) * len(idx)
        row = dict(zip(("loss", "recon", "kl"), (totals / len(data)).tolist()), epoch=epoch)
        history.append(row)
        if progress:
            progress(row)
    return history


def train_wgan(model: WganModel, data: np.ndarray, schedule: GenerativeSchedule, seed: int = 0,
               progress=None) -> list[dict]:
    """Alternate ``n_critic`` critic updates with one generator update; data must lie in [-1, 1]."""
    dt = model.critic.dtype
    data = np.asarray(data, dtype=dt)
    shape = model.critic.input_shape
    if data.shape[1:] != shape:
        data = data.reshape((len(data),) + shape)
    rng = np.random.default_rng(seed)
    opt = schedule.adam()
    gp = schedule.gp
    c_params = model.critic.parameters()
    g_params = model.generator.parameters()
    history = []
    for epoch in range(1, schedule.epochs + 1):
        batches = _batches(len(data), schedule.batch_size, rng)
        gen_steps = max(1, len(batches) // gp.n_critic)
        stats = {"wasserstein": 0.0, "gp": 0.0, "critic_loss": 0.0, "generator_loss": 0.0}
        critic_steps = 0
        for g_step in range(gen_steps):
            for c in range(gp.n_critic):
                idx = batches[(g_step * gp.n_critic + c) % len(batches)]
                real = data[idx]
                with no_grad():
                    noise = rng.standard_normal((len(idx), model.noise_dim)).astype(dt)
                    fake = model.generator(Tensor(noise), training=True, rng=rng).data
                loss, parts = critic_loss_with_gp(model, real, fake, rng, gp)
                zero_grad(c_params)
                backward(loss)
                adam_step(c_params, opt)
                critic_steps += 1
                for k in ("wasserstein", "gp", "critic_loss"):
                    stats[k] += parts[k]
            noise = rng.standard_normal((schedule.batch_size, model.noise_dim)).astype(dt)
            g_loss = generator_loss(model, noise, rng)
            backward(g_loss)
            zero_grad(c_params)
            adam_step(g_params, opt)
            stats["generator_loss"] += g_loss.item()
        row = {
            "epoch": epoch,
            "wasserstein": stats["wasserstein"] / critic_steps,
            "gp": stats["gp"] / critic_steps,
            "critic_loss": stats["critic_loss"] / critic_steps,
            "generator_loss": stats["generator_loss"] / gen_steps,
            "critic_steps": critic_steps,
            "generator_steps": gen_steps,
        }
        history.append(row)
        if progress:
            progress(row)
    return history


def _check_single_class(dataset: SpectrogramDataset, class_label: str):
    want = LABEL_INDEX[class_label]
    if len(dataset) == 0:
        raise ValueError("generative training set is empty")
    if np.any(dataset.labels != want):
        raise ValueError(f"generative training set must contain only class {class_label!r}")


def train_generative(kind: str, class_label: str, dataset: SpectrogramDataset, schedule: GenerativeSchedule,
                     seed: int = 0, model=None, progress=None) -> tuple[ModelCheckpoint, list[dict]]:
    """Train one per-class model on native [0, 1] spectrograms and package it as a checkpoint."""
    _check_single_class(dataset, class_label)
    native = dataset.native[..., None] if dataset.native.ndim == 3 else dataset.native
    if kind == "vae":
        model = model or build_vae(seed, data_shape=native.shape[1:])
        history = train_vae(model, native, schedule, seed, progress)
    elif kind == "wgan":
        model = model or build_wgan(seed, data_shape=native.shape[1:])
        history = train_wgan(model, native * 2.0 - 1.0, schedule, seed, progress)
    else:
        raise ValueError(f"unknown generative model kind {kind!r}")
    meta = {"kind": kind, "class_label": class_label, "schedule": asdict(schedule), "epochs_done": len(history)}
    return ModelCheckpoint(kind, model.networks(), seed, meta), history


def model_from_checkpoint(ckpt: ModelCheckpoint):
    nets = ckpt.networks
    if ckpt.architecture == "vae":
        return VaeModel(nets["encoder"], nets["mu_head"], nets["logvar_head"], nets["decoder"])
    if ckpt.architecture == "wgan":
        return WganModel(nets["generator"], nets["critic"])
    raise ValueError(f"checkpoint holds {ckpt.architecture!r}, not a generative model")


def sample_native(ckpt: ModelCheckpoint, count: int, seed: int, batch_size: int = 64) -> np.ndarray:
    """Draw ``count`` samples in [0, 1] with shape (count, H, W)."""
    if count <= 0:
        raise ValueError(f"sample count must be positive, got {count}")
    model = model_from_checkpoint(ckpt)
    rng = np.random.default_rng(seed)
    out = []
    with no_grad():
        for start in range(0, count, batch_size):
            n = min(batch_size, count - start)
            if isinstance(model, VaeModel):
                z = rng.standard_normal((n, model.latent_dim)).astype(model.decoder.dtype)
                out.append(model.decode(Tensor(z)))
            else:
                z = rng.standard_normal((n, model.noise_dim)).astype(model.generator.dtype)
                g = model.generator(Tensor(z), training=False).data
                out.append(np.clip((g + 1.0) / 2.0, 0.0, 1.0))
    arr = np.concatenate(out)
    return arr[..., 0] if arr.ndim == 4 and arr.shape[-1] == 1 else arr


def sample_synthetic(ckpt: ModelCheckpoint, count: int, class_label: str, seed: int) -> list[Spectrogram]:
    """Sample spectrograms from a per-class checkpoint, marked with their synthetic origin."""
    trained_for = ckpt.meta.get("class_label")
    if trained_for is not None and trained_for != class_label:
        raise ValueError(f"checkpoint was trained on {trained_for!r}, asked for {class_label!r}")
    arr = sample_native(ckpt, count, seed)
    tag = f"{ckpt.architecture}-{class_label}-s{seed}"
    return [Spectrogram(a, tag, i, class_label, origin=ckpt.architecture) for i, a in enumerate(arr)]


def synthetic_dataset(ckpt: ModelCheckpoint, count: int, class_label: str, seed: int) -> SpectrogramDataset:
    if count == 0:
        shape = ckpt.networks["decoder" if ckpt.architecture == "vae" else "generator"].output_shape
        return SpectrogramDataset.empty(shape[:2])
    specs = sample_synthetic(ckpt, count, class_label, seed)
    arr = np.stack([s.values for s in specs])
    return SpectrogramDataset.from_native(arr, class_label, ckpt.architecture, specs[0].subject_id)
