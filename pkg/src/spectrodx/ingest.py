"""Reading EEG recordings, z-scoring channels and cutting 5-second segment vectors."""
from __future__ import annotations

import hashlib
import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

LABELS = ("norm", "sch")
SEGMENT_SECONDS = 5

CHANNELS_16 = ["F7", "F3", "F4", "F8", "T3", "C3", "Cz", "C4", "T4", "T5", "P3", "Pz", "P4", "T6", "O1", "O2"]
CHANNELS_19 = ["Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "T3", "C3", "Cz", "C4", "T4", "T5", "P3", "Pz",
               "P4", "T6", "O1", "O2"]

TEXT_SAMPLES_PER_CHANNEL = 7680
TEXT_RATE_HZ = 128
EDF_RATE_HZ = 250
EDF_MAX_SAMPLES = 185000


class IngestError(ValueError):
    pass


class FormatError(IngestError):
    pass


class ParseError(IngestError):
    pass


class EdfHeaderError(IngestError):
    pass


class EdfRecordCountError(IngestError):
    pass


class ChannelCountError(IngestError):
    pass


class DegenerateChannelError(IngestError):
    pass


class SegmentationError(IngestError):
    pass


@dataclass
class SubjectRecording:
    subject_id: str
    label: str
    sampling_rate_hz: int
    channels: list[str]
    samples: np.ndarray  # (channels, T), microvolts
    source: str | None = None

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")
        if self.sampling_rate_hz not in (TEXT_RATE_HZ, EDF_RATE_HZ):
            raise ValueError(f"sampling rate must be 128 or 250 Hz, got {self.sampling_rate_hz}")
        if self.samples.ndim != 2 or self.samples.shape[0] != len(self.channels):
            raise ValueError(
                f"samples shape {self.samples.shape} does not match {len(self.channels)} channels"
            )

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]


@dataclass
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray


@dataclass
class SegmentVector:
    subject_id: str
    segment_index: int
    data: np.ndarray
    label: str
    n_channels: int = field(default=0)


def infer_label(path: Path) -> str:
    """Guess norm/sch from a parent directory name or an h/s filename prefix."""
    for part in reversed(path.parts[:-1]):
        low = part.lower()
        if low in LABELS:
            return low
        if low in ("healthy", "control", "controls"):
            return "norm"
        if low in ("schizophrenia", "patients"):
            return "sch"
    stem = path.stem.lower()
    if stem.startswith("h"):
        return "norm"
    if stem.startswith("s"):
        return "sch"
    raise IngestError(f"cannot infer label for {path}; pass label explicitly")


def read_column_text(path, label: str | None = None, n_channels: int = 16,
                     samples_per_channel: int = TEXT_SAMPLES_PER_CHANNEL) -> SubjectRecording:
    """Parse a one-value-per-line file holding every channel back to back."""
    path = Path(path)
    expected = n_channels * samples_per_channel
    lines = path.read_text().split("\n")
    if lines and lines[-1].strip() == "":
        lines = lines[:-1]
    if len(lines) != expected:
        raise FormatError(f"{path}: expected {expected} lines ({n_channels}x{samples_per_channel}), got {len(lines)}")
    values = np.empty(expected, dtype=np.float64)
    for i, line in enumerate(lines):
        try:
            values[i] = float(line)
        except ValueError:
            raise ParseError(f"{path}: line {i + 1} is not numeric: {line.strip()[:40]!r}") from None
    channels = CHANNELS_16 if n_channels == 16 else [f"ch{i}" for i in range(n_channels)]
    return SubjectRecording(
        subject_id=path.stem,
        label=label or infer_label(path),
        sampling_rate_hz=TEXT_RATE_HZ,
        channels=list(channels),
        samples=values.reshape(n_channels, samples_per_channel),
        source=str(path),
    )


def _field(raw: bytes, start: int, width: int, what: str, cast):
    text = raw[start:start + width].decode("ascii", errors="replace").strip()
    try:
        return cast(text)
    except ValueError:
        raise EdfHeaderError(f"bad EDF header field {what!r}: {text!r}") from None


def read_edf(path, label: str | None = None, expected_channels: int = 19,
             max_samples: int | None = EDF_MAX_SAMPLES) -> SubjectRecording:
    """Parse an EDF file of 16-bit samples and keep the first ``max_samples`` per channel."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 256:
        raise EdfHeaderError(f"{path}: file shorter than the 256-byte header")
    if raw[:8].decode("ascii", errors="replace").strip() != "0":
        raise EdfHeaderError(f"{path}: bad version field {raw[:8]!r}")
    header_bytes = _field(raw, 184, 8, "header bytes", int)
    n_records = _field(raw, 236, 8, "number of records", int)
    duration = _field(raw, 244, 8, "record duration", float)
    ns = _field(raw, 252, 4, "number of signals", int)
    if header_bytes != 256 * (ns + 1):
        raise EdfHeaderError(f"{path}: header size {header_bytes} inconsistent with {ns} signals")
    if len(raw) < header_bytes:
        raise EdfHeaderError(f"{path}: truncated signal headers")
    if ns != expected_channels:
        raise ChannelCountError(f"{path}: expected {expected_channels} channels, found {ns}")

    def block(offset: int, width: int) -> list[str]:
        base = 256 + offset * ns
        return [raw[base + i * width:base + (i + 1) * width].decode("ascii", errors="replace").strip()
                for i in range(ns)]

    labels = block(0, 16)
    try:
        pmin = np.array([float(v) for v in block(104, 8)])
        pmax = np.array([float(v) for v in block(112, 8)])
        dmin = np.array([float(v) for v in block(120, 8)])
        dmax = np.array([float(v) for v in block(128, 8)])
        nsamp = np.array([int(v) for v in block(216, 8)])
    except ValueError as exc:
        raise EdfHeaderError(f"{path}: unparseable signal header: {exc}") from None
    if np.any(dmax == dmin):
        raise EdfHeaderError(f"{path}: digital range is empty for some channel")
    if np.ptp(nsamp) != 0:
        raise EdfHeaderError(f"{path}: channels have differing samples per record")

    record_len = int(nsamp.sum())
    body = len(raw) - header_bytes
    if body % (2 * record_len):
        raise EdfRecordCountError(f"{path}: data section of {body} bytes is not a whole number of records")
    actual_records = body // (2 * record_len)
    if n_records != -1 and actual_records != n_records:
        raise EdfRecordCountError(f"{path}: header declares {n_records} records, file holds {actual_records}")

    digital = np.frombuffer(raw, dtype="<i2", offset=header_bytes).reshape(actual_records, ns, nsamp[0])
    digital = digital.transpose(1, 0, 2).reshape(ns, -1).astype(np.float64)
    gain = (pmax - pmin) / (dmax - dmin)
    physical = (digital - dmin[:, None]) * gain[:, None] + pmin[:, None]
    if max_samples is not None:
        physical = physical[:, :max_samples]

    rate = nsamp[0] / duration
    if abs(rate - round(rate)) > 1e-9:
        raise EdfHeaderError(f"{path}: non-integer sampling rate {rate}")
    if ns == len(CHANNELS_19):
        clean = [lab.replace("EEG", "").split("-")[0].strip() for lab in labels]
        if [c.lower() for c in clean] != [c.lower() for c in CHANNELS_19]:
            warnings.warn(f"{path}: channel order {clean} differs from the standard 10-20 list", stacklevel=2)
    return SubjectRecording(
        subject_id=path.stem,
        label=label or infer_label(path),
        sampling_rate_hz=int(round(rate)),
        channels=labels,
        samples=np.ascontiguousarray(physical),
        source=str(path),
    )


def write_edf(path, samples: np.ndarray, sampling_rate_hz: int, channels: list[str],
              physical_range: tuple[float, float] | None = None, record_seconds: int = 1) -> Path:
    """Write a minimal EDF file (used for fixtures and round-trip checks)."""
    path = Path(path)
    ns, t = samples.shape
    per_record = sampling_rate_hz * record_seconds
    if t % per_record:
        raise ValueError(f"{t} samples is not a whole number of {record_seconds}s records")
    n_records = t // per_record
    if physical_range is None:
        lo, hi = float(samples.min()), float(samples.max())
        if hi == lo:
            hi = lo + 1.0
    else:
        lo, hi = physical_range
    dmin, dmax = -32768, 32767
    digital = np.round((samples - lo) * (dmax - dmin) / (hi - lo) + dmin)
    digital = np.clip(digital, dmin, dmax).astype("<i2")

    def f(value, width):
        s = str(value)[:width]
        return s.ljust(width).encode("ascii")

    head = b"".join([
        f(0, 8), f("X X X X", 80), f("Startdate X X X X", 80), f("01.01.00", 8), f("00.00.00", 8),
        f(256 * (ns + 1), 8), f("", 44), f(n_records, 8), f(record_seconds, 8), f(ns, 4),
    ])
    sig = b"".join(
        b"".join(f(v, w) for v in values)
        for values, w in [
            (channels, 16), (["AgAgCl electrode"] * ns, 80), (["uV"] * ns, 8),
            ([_fmt_num(lo)] * ns, 8), ([_fmt_num(hi)] * ns, 8), ([dmin] * ns, 8), ([dmax] * ns, 8),
            ([""] * ns, 80), ([per_record] * ns, 8), ([""] * ns, 32),
        ]
    )
    body = digital.reshape(ns, n_records, per_record).transpose(1, 0, 2).tobytes()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(head + sig + body)
    return path


def _fmt_num(x: float) -> str:
    s = repr(float(x))
    if len(s) > 8:
        s = f"{x:.8g}"[:8]
    return s


def zscore_normalize(rec: SubjectRecording) -> tuple[SubjectRecording, NormalizationStats]:
    """Standardize every channel of one subject to mean 0, population std 1."""
    mean = rec.samples.mean(axis=1)
    std = rec.samples.std(axis=1)
    for name, s in zip(rec.channels, std):
        if not s > 0:
            raise DegenerateChannelError(f"{rec.subject_id}: channel {name} has zero variance")
    z = (rec.samples - mean[:, None]) / std[:, None]
    return replace(rec, samples=z), NormalizationStats(mean=mean, std=std)


def segment_and_concat(rec: SubjectRecording, seconds: int = SEGMENT_SECONDS) -> list[SegmentVector]:
    """Cut into non-overlapping windows and join each window's channels end to end.

    Element ``k`` of a vector is ``samples[k // W][start + k % W]`` with ``W = seconds * rate``;
    trailing samples that do not fill a window are dropped.
    """
    w = seconds * rec.sampling_rate_hz
    n_seg = rec.n_samples // w
    if n_seg < 1:
        raise SegmentationError(f"{rec.subject_id}: {rec.n_samples} samples is shorter than one {w}-sample window")
    c = len(rec.channels)
    windows = rec.samples[:, :n_seg * w].reshape(c, n_seg, w).transpose(1, 0, 2)
    return [
        SegmentVector(rec.subject_id, i, np.ascontiguousarray(windows[i]).reshape(-1), rec.label, c)
        for i in range(n_seg)
    ]


def file_checksum(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def read_recording(path, label: str | None = None) -> SubjectRecording:
    path = Path(path)
    if path.suffix.lower() == ".edf":
        return read_edf(path, label)
    return read_column_text(path, label)


def discover(root, patterns=("*.eea", "*.txt", "*.edf")) -> list[Path]:
    root = Path(root)
    found = sorted({p for pat in patterns for p in root.rglob(pat)})
    return found


def build_manifest(recordings: list[SubjectRecording], path=None) -> list[dict]:
    """One manifest entry per subject: id, label, file, segment count, checksum."""
    entries = []
    for rec in recordings:
        w = SEGMENT_SECONDS * rec.sampling_rate_hz
        entries.append({
            "subject_id": rec.subject_id,
            "label": rec.label,
            "path": rec.source,
            "segments": rec.n_samples // w,
            "checksum": file_checksum(rec.source) if rec.source and Path(rec.source).exists() else None,
        })
    if path is not None:
        Path(path).write_text(json.dumps(entries, indent=2))
    return entries
