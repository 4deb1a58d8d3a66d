"""STFT power spectrograms, log scaling and the 128x128 classifier inputs."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import windows

from .ingest import SegmentVector, SubjectRecording, segment_and_concat

LABEL_INDEX = {"norm": 0, "sch": 1}
INDEX_LABEL = {v: k for k, v in LABEL_INDEX.items()}
ORIGINS = ("real", "vae", "wgan")
CLASSIFIER_SIZE = (128, 128)


@dataclass(frozen=True)
class StftConfig:
    nfft: int = 1022
    nperseg: int = 360
    noverlap: int = 45
    tukey_alpha: float = 0.25
    # None keeps raw frames; "constant" removes each frame's mean first
    detrend: str | None = None

    def __post_init__(self):
        if self.nperseg > self.nfft:
            raise ValueError(f"nperseg {self.nperseg} exceeds nfft {self.nfft}")
        if not 0 <= self.noverlap < self.nperseg:
            raise ValueError(f"noverlap must be in [0, nperseg), got {self.noverlap}")
        if self.detrend not in (None, "constant"):
            raise ValueError(f"unsupported detrend {self.detrend!r}")

    @property
    def freq_bins(self) -> int:
        return self.nfft // 2 + 1

    def window(self) -> np.ndarray:
        return windows.tukey(self.nperseg, self.tukey_alpha, sym=False)

    def n_frames(self, length: int) -> int:
        return 1 + (length - self.nperseg) // (self.nperseg - self.noverlap)


@dataclass
class Spectrogram:
    values: np.ndarray  # (freq, time)
    subject_id: str
    segment_index: int
    label: str
    origin: str = "real"

    def __post_init__(self):
        if self.origin not in ORIGINS:
            raise ValueError(f"origin must be one of {ORIGINS}, got {self.origin!r}")

    @property
    def freq_bins(self) -> int:
        return self.values.shape[0]

    @property
    def time_frames(self) -> int:
        return self.values.shape[1]

    @property
    def key(self) -> str:
        return f"{self.origin}:{self.subject_id}:{self.segment_index}"


def stft_power(x: np.ndarray, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """One-sided |FFT|^2 of Tukey-windowed frames zero-padded to ``nfft``; shape (nfft/2+1, frames)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or len(x) < cfg.nperseg:
        raise ValueError(f"segment of length {len(x)} is shorter than nperseg={cfg.nperseg}")
    step = cfg.nperseg - cfg.noverlap
    n = cfg.n_frames(len(x))
    idx = np.arange(cfg.nperseg)[None, :] + step * np.arange(n)[:, None]
    frames = x[idx]
    if cfg.detrend == "constant":
        frames = frames - frames.mean(axis=1, keepdims=True)
    spec = np.fft.rfft(frames * cfg.window(), n=cfg.nfft, axis=1)
    return (spec.real**2 + spec.imag**2).T


def stft_spectrogram(seg: SegmentVector, cfg: StftConfig = StftConfig()) -> Spectrogram:
    return Spectrogram(stft_power(seg.data, cfg), seg.subject_id, seg.segment_index, seg.label)


def log_normalize(values: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    """log10 then per-image min-max to [0, 1]; a constant image maps to zeros."""
    v = np.asarray(values, dtype=np.float64)
    if np.any(v < 0):
        raise ValueError("power spectrogram must be non-negative")
    lv = np.log10(v + floor)
    lo, hi = lv.min(), lv.max()
    if hi - lo <= 0:
        return np.zeros_like(lv)
    return (lv - lo) / (hi - lo)


def _interp_axis(src_n: int, dst_n: int):
    if dst_n == 1:
        pos = np.zeros(1)
    else:
        pos = np.arange(dst_n) * (src_n - 1) / (dst_n - 1)
    i0 = np.clip(np.floor(pos).astype(int), 0, src_n - 1)
    i1 = np.minimum(i0 + 1, src_n - 1)
    frac = pos - i0
    return i0, i1, frac


def resize_bilinear(img: np.ndarray, size=CLASSIFIER_SIZE) -> np.ndarray:
    """Bilinear resize on a corner-aligned grid (output corners hit input corners exactly)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < 2:
        raise ValueError(f"resize needs a 2-d image with both dims >= 2, got {img.shape}")
    r0, r1, fr = _interp_axis(img.shape[0], size[0])
    c0, c1, fc = _interp_axis(img.shape[1], size[1])
    rows = img[r0] * (1 - fr)[:, None] + img[r1] * fr[:, None]
    return rows[:, c0] * (1 - fc)[None, :] + rows[:, c1] * fc[None, :]


@dataclass
class SpectrogramDataset:
    """Paired classifier (128x128) and native-size arrays sharing one provenance table."""

    classifier: np.ndarray  # (N, 128, 128)
    native: np.ndarray  # (N, F, T)
    labels: np.ndarray  # (N,) 0=norm, 1=sch
    subject_ids: list[str]
    segment_indices: list[int]
    origins: list[str]
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.labels)

    @property
    def keys(self) -> list[str]:
        return [f"{o}:{s}:{i}" for o, s, i in zip(self.origins, self.subject_ids, self.segment_indices)]

    def subset(self, idx) -> SpectrogramDataset:
        idx = np.asarray(idx, dtype=int)
        return SpectrogramDataset(
            self.classifier[idx], self.native[idx], self.labels[idx],
            [self.subject_ids[i] for i in idx], [self.segment_indices[i] for i in idx],
            [self.origins[i] for i in idx], dict(self.meta),
        )

    def concat(self, other: SpectrogramDataset) -> SpectrogramDataset:
        if len(other) == 0:
            return self.subset(np.arange(len(self)))
        if len(self) == 0:
            return other.subset(np.arange(len(other)))
        return SpectrogramDataset(
            np.concatenate([self.classifier, other.classifier]),
            np.concatenate([self.native, other.native]),
            np.concatenate([self.labels, other.labels]),
            self.subject_ids + other.subject_ids,
            self.segment_indices + other.segment_indices,
            self.origins + other.origins,
            dict(self.meta),
        )

    def of_class(self, label: str) -> SpectrogramDataset:
        return self.subset(np.flatnonzero(self.labels == LABEL_INDEX[label]))

    @classmethod
    def empty(cls, native_shape=(512, 32)) -> SpectrogramDataset:
        return cls(np.zeros((0,) + CLASSIFIER_SIZE, np.float32), np.zeros((0,) + tuple(native_shape), np.float32),
                   np.zeros(0, np.int64), [], [], [])

    @classmethod
    def from_native(cls, native: np.ndarray, label: str, origin: str, tag: str) -> SpectrogramDataset:
        """Wrap native-size [0, 1] images (e.g. synthetic samples) and derive classifier inputs."""
        native = np.asarray(native, dtype=np.float32)
        resized = np.stack([resize_bilinear(x) for x in native]).astype(np.float32) if len(native) else \
            np.zeros((0,) + CLASSIFIER_SIZE, np.float32)
        n = len(native)
        return cls(resized, native, np.full(n, LABEL_INDEX[label], np.int64), [tag] * n, list(range(n)),
                   [origin] * n)


def build_spectrogram_dataset(recordings: list[SubjectRecording], cfg: StftConfig = StftConfig()
                              ) -> SpectrogramDataset:
    """Segment every (already z-scored) recording and emit both image representations."""
    native, resized, labels, subjects, segs = [], [], [], [], []
    for rec in recordings:
        for seg in segment_and_concat(rec):
            img = log_normalize(stft_power(seg.data, cfg))
            native.append(img.astype(np.float32))
            resized.append(resize_bilinear(img).astype(np.float32))
            labels.append(LABEL_INDEX[seg.label])
            subjects.append(seg.subject_id)
            segs.append(seg.segment_index)
    if not native:
        return SpectrogramDataset.empty()
    return SpectrogramDataset(
        np.stack(resized), np.stack(native), np.asarray(labels, np.int64), subjects, segs, ["real"] * len(labels),
        {"stft": {"nfft": cfg.nfft, "nperseg": cfg.nperseg, "noverlap": cfg.noverlap,
                  "tukey_alpha": cfg.tukey_alpha, "detrend": cfg.detrend},
         "transform": "log10 + per-image min-max"},
    )


def save_archive(path, data: SpectrogramDataset) -> Path:
    """Write ``<path>.native.f32``, ``<path>.classifier.f32`` and a JSON sidecar ``<path>.json``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data.native.astype("<f4").tofile(str(path) + ".native.f32")
    data.classifier.astype("<f4").tofile(str(path) + ".classifier.f32")
    sidecar = {
        "native_shape": list(data.native.shape),
        "classifier_shape": list(data.classifier.shape),
        "labels": [INDEX_LABEL[int(v)] for v in data.labels],
        "subject_ids": data.subject_ids,
        "segment_indices": [int(i) for i in data.segment_indices],
        "origins": data.origins,
        "meta": data.meta,
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar))
    return path


def load_archive(path) -> SpectrogramDataset:
    side = json.loads(Path(str(path) + ".json").read_text())
    native = np.fromfile(str(path) + ".native.f32", dtype="<f4").reshape(side["native_shape"])
    clf = np.fromfile(str(path) + ".classifier.f32", dtype="<f4").reshape(side["classifier_shape"])
    labels = np.array([LABEL_INDEX[v] for v in side["labels"]], dtype=np.int64)
    return SpectrogramDataset(clf, native, labels, side["subject_ids"], side["segment_indices"], side["origins"],
                              side.get("meta", {}))


def export_png(img: np.ndarray, path) -> Path:
    """Grayscale preview with low frequencies at the bottom."""
    from PIL import Image

    arr = np.asarray(img, dtype=np.float64)
    lo, hi = arr.min(), arr.max()
    scaled = np.zeros_like(arr) if hi <= lo else (arr - lo) / (hi - lo)
    Image.fromarray(np.flipud((scaled * 255).round().astype(np.uint8)), mode="L").save(path)
    return Path(path)
