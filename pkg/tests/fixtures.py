"""Synthetic EEG corpora whose two classes differ in one frequency band's power."""
from pathlib import Path

import numpy as np

from spectrodx.ingest import CHANNELS_19, write_edf


def toy_signal(label, rng, rate=128, seconds=60, n_channels=16, band_hz=20.0, amplitude=1.5):
    """Pink-ish noise per channel; "sch" subjects get an extra sinusoid at ``band_hz``."""
    t = np.arange(rate * seconds) / rate
    white = rng.standard_normal((n_channels, len(t)))
    # one-pole low-pass gives a falling spectrum like real EEG
    x = np.empty_like(white)
    x[:, 0] = white[:, 0]
    for i in range(1, len(t)):
        x[:, i] = 0.9 * x[:, i - 1] + white[:, i]
    x *= 10.0
    if label == "sch":
        phase = rng.uniform(0, 2 * np.pi, (n_channels, 1))
        x += amplitude * 10.0 * np.sin(2 * np.pi * band_hz * t[None, :] + phase)
    return x


def write_text_recording(path, samples):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(f"{v:.4f}" for v in samples.reshape(-1)) + "\n")
    return path


def make_text_corpus(root, n_norm, n_sch, seed=0, **kw):
    """Write one-value-per-line 16-channel files into ``root/norm`` and ``root/sch``."""
    rng = np.random.default_rng(seed)
    paths = []
    for label, n in (("norm", n_norm), ("sch", n_sch)):
        for i in range(n):
            prefix = "h" if label == "norm" else "s"
            paths.append(write_text_recording(Path(root) / label / f"{prefix}{i:02d}.eea",
                                              toy_signal(label, rng, **kw)))
    return paths


def make_edf_corpus(root, n_norm, n_sch, seconds=95, seed=0):
    rng = np.random.default_rng(seed)
    paths = []
    for label, n in (("norm", n_norm), ("sch", n_sch)):
        for i in range(n):
            x = toy_signal(label, rng, rate=250, seconds=seconds, n_channels=19)
            p = Path(root) / label / f"{label}{i:02d}.edf"
            p.parent.mkdir(parents=True, exist_ok=True)
            paths.append(write_edf(p, x, 250, CHANNELS_19))
    return paths


def tiny_cnn_layers():
    """Same layer kinds as the full classifier at a fraction of the width."""
    return [
        {"type": "conv2d", "filters": 4, "kernel": [3, 3], "stride": [1, 1], "activation": "relu"},
        {"type": "max_pool", "size": 4},
        {"type": "conv2d", "filters": 4, "kernel": [3, 3], "stride": [1, 1], "activation": "relu"},
        {"type": "max_pool", "size": 4},
        {"type": "flatten"},
        {"type": "dense", "units": 16, "activation": "relu"},
        {"type": "dense", "units": 2},
    ]


def untrained_generators(kind="vae", shape=(64, 32, 1), seed=0):
    """Per-class checkpoints of freshly initialised reduced-width generators."""
    from spectrodx.autodiff import ModelCheckpoint
    from spectrodx.pipeline import build_scaled_vae, build_scaled_wgan

    out = {}
    for i, label in enumerate(("norm", "sch")):
        if kind == "vae":
            model = build_scaled_vae(seed + i, shape, divisor=32)
        else:
            model = build_scaled_wgan(seed + i, shape, divisor=16)
        out[label] = ModelCheckpoint(kind, model.networks(), seed + i, {"kind": kind, "class_label": label})
    return out
