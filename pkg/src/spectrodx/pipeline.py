"""Experiment plumbing: configuration, the pre-augmentation split, augmentation, sweeps and reports."""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .autodiff import ModelCheckpoint
from .classifier import TrainConfig, build_proposed_cnn, evaluate, predict, train_classifier
from .generative import (
    build_vae,
    build_wgan,
    critic_layers,
    generator_layers,
    synthetic_dataset,
    vae_decoder_layers,
    vae_encoder_layers,
)
from .metrics import evaluate_scores, write_roc_csv
from .spectrogram import LABEL_INDEX, SpectrogramDataset

log = logging.getLogger(__name__)

SCHEMA_PATH = Path(__file__).with_name("schemas") / "report.schema.json"
# (+norm, +sch); norm always gets 30 extra to even out the slightly smaller healthy class
SWEEP_ROWS = [(n + 30, n) for n in (200, 300, 400, 600, 700, 800)]


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


class LeakageError(RuntimeError):
    """A test item shows up where only training data may appear, or vice versa."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

DEFAULT_CONFIG: dict = {
    "data_dir": None,
    "output_dir": "runs/default",
    "channels": 16,
    "seed": 0,
    "dtype": "float32",
    "split": {"fraction": 0.2},
    "stft": {"nfft": 1022, "nperseg": 360, "noverlap": 45, "tukey_alpha": 0.25, "detrend": None},
    "cnn": {"learning_rate": 8e-5, "batch_size": 32, "epochs": 100},
    "generative": {
        "vae_epochs": 6000,
        "wgan_epochs": 2000,
        "batch_size": 32,
        "vae_learning_rate": 8e-5,
        "wgan_learning_rate": 1e-4,
        "width_divisor": 1,
        "n_critic": 3,
        "lambda_gp": 10.0,
    },
    "synthetic_eval": {"per_class": 600, "learning_rate": 1e-5, "epochs": 300, "audit_samples": 1008,
                       "autoencoder_epochs": 50},
    "sweep": {"models": ["vae", "wgan"], "rows": [list(r) for r in SWEEP_ROWS], "learning_rate": 1e-5,
              "max_epochs": 300, "seeds": [0, 1, 2]},
    "final": {"learning_rate": 8e-5, "epochs": 100, "model": None, "add_norm": None, "add_sch": None},
    "lime": {"cell": 16, "num_samples": 1000, "kernel_width": 0.25, "ridge_alpha": 1.0, "replacement": "mean",
             "count": 4},
    "tsne": {"perplexity": 30.0, "iterations": 1000, "learning_rate": 200.0, "early_exaggeration": 12.0,
             "exaggeration_iters": 250},
}


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in out:
            raise ConfigError(f"unknown config key {where}{k}")
        if isinstance(out[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {where}{k} must be a mapping")
            out[k] = _merge(out[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


class _ConfigLoader(yaml.SafeLoader):
    """Safe loader that also reads ``1e-4`` as a float; plain YAML 1.1 wants ``1.0e-4``."""


_ConfigLoader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*)?(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"),
    list("-+0123456789."),
)


def _load_yaml(text: str):
    return yaml.load(text, Loader=_ConfigLoader)


def _parse_value(text: str):
    return _load_yaml(text)


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_CONFIG))

    @classmethod
    def load(cls, path=None, overrides: list[str] | None = None) -> ExperimentConfig:
        """Defaults, then a YAML/JSON file, then ``key.sub=value`` overrides."""
        values = copy.deepcopy(DEFAULT_CONFIG)
        if path is not None:
            try:
                loaded = _load_yaml(Path(path).read_text()) or {}
            except (OSError, yaml.YAMLError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            if not isinstance(loaded, dict):
                raise ConfigError(f"config {path} must be a mapping")
            values = _merge(values, loaded)
        for item in overrides or []:
            key, sep, raw = item.partition("=")
            if not sep:
                raise ConfigError(f"override {item!r} must look like key=value")
            nested: dict = {}
            cur = nested
            parts = key.strip().split(".")
            for p in parts[:-1]:
                cur = cur.setdefault(p, {})
            cur[parts[-1]] = _parse_value(raw)
            values = _merge(values, nested)
        cfg = cls(values)
        cfg.validate(check_paths=False)
        return cfg

    def __getitem__(self, key):
        return self.values[key]

    @property
    def seed(self) -> int:
        return int(self.values["seed"])

    @property
    def dtype(self):
        return np.dtype(self.values["dtype"])

    @property
    def output_dir(self) -> Path:
        return Path(self.values["output_dir"])

    def validate(self, check_paths: bool = True):
        v = self.values
        if v["channels"] not in (16, 19):
            raise ConfigError(f"channels must be 16 or 19, got {v['channels']}")
        if v["dtype"] not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")
        frac = v["split"]["fraction"]
        if not 0 < frac < 1:
            raise ConfigError(f"split fraction must be in (0, 1), got {frac}")
        if int(v["generative"]["width_divisor"]) < 1:
            raise ConfigError("generative.width_divisor must be >= 1")
        for row in v["sweep"]["rows"]:
            if len(row) != 2 or min(row) < 0:
                raise ConfigError(f"sweep rows must be [add_norm, add_sch] with counts >= 0, got {row}")
        if check_paths:
            if v["data_dir"] is None or not Path(v["data_dir"]).is_dir():
                raise ConfigError(f"data_dir {v['data_dir']!r} does not exist")

    def digest(self) -> str:
        blob = json.dumps(self.values, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def require_generative(self, stage: str):
        if self.values["channels"] == 19:
            raise ConfigError(f"stage {stage!r} is not part of the 19-channel pipeline "
                              "(ingest, spectrogram and train-cnn only)")


def run_manifest(cfg: ExperimentConfig) -> dict:
    return {"config_hash": cfg.digest(), "seed": cfg.seed, "code_version": __version__}


# ---------------------------------------------------------------------------
# width-scaled generative builders
# ---------------------------------------------------------------------------

def _div(filters, d):
    return tuple(max(1, f // d) for f in filters)


def build_scaled_vae(seed: int, data_shape, divisor: int = 1, dtype=np.float32):
    """The VAE topology with every width divided by ``divisor``; ``divisor=1`` is the reference model."""
    h, w, c = data_shape
    enc_f = _div((64, 128, 256, 512, 1024), divisor)
    hidden = _div((1024, 1024), divisor)
    dec_f = _div((512, 256, 128, 64), divisor)
    seed_shape = (h // 32, max(1, w // 32), max(1, 1024 // divisor))
    return build_vae(seed, dtype, data_shape, latent_dim=max(1, 512 // divisor),
                     encoder=vae_encoder_layers(enc_f, hidden),
                     decoder=vae_decoder_layers(dec_f, hidden, seed_shape, out_channels=c))


def build_scaled_wgan(seed: int, data_shape, divisor: int = 1, dtype=np.float32):
    h, w, c = data_shape
    gen_f = _div((256, 128, 64, 32), divisor) + (c,)
    seed_shape = (h // 32, max(1, w // 32), max(1, 512 // divisor))
    return build_wgan(seed, dtype, data_shape, generator=generator_layers(gen_f, seed_shape),
                      critic=critic_layers(_div((32, 64, 128, 256, 512), divisor)))


# ---------------------------------------------------------------------------
# split
# ---------------------------------------------------------------------------

@dataclass
class SplitManifest:
    train_ids: list[str]
    test_ids: list[str]
    fraction: float
    seed: int
    path: str | None = None

    def __post_init__(self):
        overlap = set(self.train_ids) & set(self.test_ids)
        if overlap:
            raise LeakageError(f"split is not disjoint: {sorted(overlap)[:3]}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("path")
        return d

    def save(self, path) -> SplitManifest:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1))
        self.path = str(path)
        return self

    @classmethod
    def load(cls, path) -> SplitManifest:
        d = json.loads(Path(path).read_text())
        return cls(d["train_ids"], d["test_ids"], d["fraction"], d["seed"], str(path))

    def require_persisted(self):
        if self.path is None or not Path(self.path).exists():
            raise LeakageError("the split manifest must be persisted before any augmentation")
        on_disk = json.loads(Path(self.path).read_text())
        if on_disk != self.to_dict():
            raise LeakageError(f"split manifest at {self.path} differs from the one in memory")


def _stratified_counts(counts: dict[int, int], fraction: float) -> dict[int, int]:
    """Per-class test sizes summing to round(fraction * N), allocated by largest remainder."""
    total = int(round(fraction * sum(counts.values())))
    exact = {c: fraction * n for c, n in counts.items()}
    alloc = {c: int(np.floor(v)) for c, v in exact.items()}
    spare = total - sum(alloc.values())
    for c in sorted(exact, key=lambda c: (-(exact[c] - alloc[c]), c))[:max(spare, 0)]:
        alloc[c] += 1
    return alloc


def split_before_augment(dataset: SpectrogramDataset, fraction: float = 0.2, seed: int = 0,
                         path=None) -> SplitManifest:
    """Stratified random train/test split of real items; persisted to ``path`` when given."""
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    if any(o != "real" for o in dataset.origins):
        raise LeakageError("only real items may be split; synthetic items found")
    keys = np.asarray(dataset.keys)
    if len(set(keys.tolist())) != len(keys):
        raise ValueError("dataset item ids are not unique")
    order = np.argsort(keys, kind="stable")
    keys, labels = keys[order], dataset.labels[order]
    classes = sorted(set(labels.tolist()))
    sizes = _stratified_counts({c: int(np.sum(labels == c)) for c in classes}, fraction)
    if sum(sizes.values()) == 0:
        raise ValueError(f"fraction {fraction} leaves the test set empty")
    if sum(sizes.values()) == len(keys):
        raise ValueError(f"fraction {fraction} leaves the training set empty")
    rng = np.random.default_rng(seed)
    test = []
    for c in classes:
        members = keys[labels == c]
        test += members[rng.permutation(len(members))[:sizes[c]]].tolist()
    test_set = set(test)
    manifest = SplitManifest([k for k in keys.tolist() if k not in test_set], sorted(test), fraction, seed)
    if path is not None:
        manifest.save(path)
    return manifest


def apply_split(dataset: SpectrogramDataset, manifest: SplitManifest) -> tuple[SpectrogramDataset, SpectrogramDataset]:
    index = {k: i for i, k in enumerate(dataset.keys)}
    missing = [k for k in manifest.train_ids + manifest.test_ids if k not in index]
    if missing:
        raise LeakageError(f"manifest names {len(missing)} items absent from the dataset, e.g. {missing[:3]}")
    if len(index) != len(manifest.train_ids) + len(manifest.test_ids):
        raise LeakageError("manifest does not cover the whole dataset")
    train = dataset.subset([index[k] for k in manifest.train_ids])
    test = dataset.subset([index[k] for k in manifest.test_ids])
    return train, test


def check_no_leakage(manifest: SplitManifest, train: SpectrogramDataset | None = None,
                     test: SpectrogramDataset | None = None) -> dict:
    """Machine check that test ids never meet synthetic or training items; returns a summary."""
    test_ids = set(manifest.test_ids)
    if test is not None:
        if any(o != "real" for o in test.origins):
            raise LeakageError("test set contains synthetic items")
        if set(test.keys) - test_ids:
            raise LeakageError("test set contains items outside the manifest's test ids")
    synthetic = 0
    if train is not None:
        keys = train.keys
        hit = test_ids.intersection(keys)
        if hit:
            raise LeakageError(f"{len(hit)} test items found in the training set, e.g. {sorted(hit)[:3]}")
        allowed = set(manifest.train_ids)
        for k, o in zip(keys, train.origins):
            if o == "real" and k not in allowed:
                raise LeakageError(f"real item {k} is in training data but not in the manifest's train ids")
        synthetic = sum(o != "real" for o in train.origins)
    return {"test_items": len(test_ids), "synthetic_train_items": synthetic, "violations": 0}


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

def augment_dataset(train: SpectrogramDataset, manifest: SplitManifest, ckpts: dict[str, ModelCheckpoint],
                    add_norm: int, add_sch: int, seed: int) -> SpectrogramDataset:
    """Append ``add_norm`` / ``add_sch`` synthetic items drawn from per-class checkpoints."""
    manifest.require_persisted()
    if add_norm < 0 or add_sch < 0:
        raise ValueError("augmentation counts must be >= 0")
    check_no_leakage(manifest, train)
    out = train.subset(np.arange(len(train)))
    for label, count in (("norm", add_norm), ("sch", add_sch)):
        if count == 0:
            continue
        if label not in ckpts:
            raise ValueError(f"no checkpoint supplied for class {label!r}")
        extra = synthetic_dataset(ckpts[label], count, label, seed + LABEL_INDEX[label])
        out = out.concat(extra)
    check_no_leakage(manifest, out)
    expected = len(train) + add_norm + add_sch
    if len(out) != expected:
        raise RuntimeError(f"augmented size {len(out)} != {expected}")
    return out


# ---------------------------------------------------------------------------
# sweep and final comparison
# ---------------------------------------------------------------------------

def select_best_row(rows: list[dict]) -> dict:
    """Highest accuracy, ties broken by lower loss."""
    if not rows:
        raise ValueError("no sweep rows")
    return min(rows, key=lambda r: (-r["accuracy"], r["loss"]))


def run_sweep(train: SpectrogramDataset, test: SpectrogramDataset, manifest: SplitManifest,
              generators: dict[str, dict[str, ModelCheckpoint]], rows=SWEEP_ROWS, seed: int = 0,
              learning_rate: float = 1e-5, max_epochs: int = 300, build_model=build_proposed_cnn,
              train_cfg: TrainConfig | None = None, progress=None) -> dict:
    """Train the CNN on each (model, +norm, +sch) augmented set and score it on the real test split."""
    check_no_leakage(manifest, train, test)
    base_cfg = train_cfg or TrainConfig(learning_rate=learning_rate, epochs=max_epochs, until_converged=True)
    table = []
    cell = 0
    for name in sorted(generators):
        for add_norm, add_sch in rows:
            cell_seed = seed + cell
            data = augment_dataset(train, manifest, generators[name], add_norm, add_sch, cell_seed)
            cfg = TrainConfig(**{**asdict(base_cfg), "seed": cell_seed})
            model, hist = train_classifier(build_model(seed=cell_seed), data, cfg)
            loss, acc = evaluate(model, test)
            row = {"model": name, "add_norm": int(add_norm), "add_sch": int(add_sch), "train_size": len(data),
                   "accuracy": acc, "loss": loss, "epochs": len(hist.epochs), "seed": cell_seed}
            table.append(row)
            if progress:
                progress(row)
            cell += 1
    best = select_best_row(table)
    return {"rows": table, "best": best, "leakage": check_no_leakage(manifest, train, test)}


def augmented_name(model: str, add_sch: int) -> str:
    return f"{model.upper()}-{add_sch}"


def run_final_comparison(train: SpectrogramDataset, test: SpectrogramDataset, manifest: SplitManifest,
                         generators: dict[str, dict[str, ModelCheckpoint]], model: str, add_norm: int, add_sch: int,
                         seed: int = 0, learning_rate: float = 8e-5, epochs: int = 100,
                         build_model=build_proposed_cnn, train_cfg: TrainConfig | None = None) -> dict:
    """Augmented vs non-augmented CNN with the full metric set and ROC curves."""
    check_no_leakage(manifest, train, test)
    cfg = train_cfg or TrainConfig(learning_rate=learning_rate, epochs=epochs, seed=seed)
    augmented = augment_dataset(train, manifest, generators[model], add_norm, add_sch, seed)
    out = {}
    for name, data in ((augmented_name(model, add_sch), augmented), ("Non-augmented", train)):
        clf, hist = train_classifier(build_model(seed=seed), data, cfg)
        probs = predict(clf, test.classifier)
        report = evaluate_scores(probs[:, 1], test.labels)
        loss, _ = evaluate(clf, test)
        row = report.to_dict()
        row.update({"loss": loss, "train_size": len(data), "roc": [list(p) for p in report.roc],
                    "history": hist.epochs})
        out[name] = row
        check_no_leakage(manifest, data, test)
    return {"rows": out, "leakage": check_no_leakage(manifest, augmented, test)}


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def validate_report(report: dict):
    import jsonschema

    schema = json.loads(SCHEMA_PATH.read_text())
    jsonschema.validate(report, schema)


def _draw_roc_png(curves: dict[str, list], path: Path, size: int = 256):
    from PIL import Image, ImageDraw

    img = Image.new("RGB", (size, size), "white")
    draw = ImageDraw.Draw(img)
    pad = 16
    span = size - 2 * pad
    draw.rectangle([pad, pad, size - pad, size - pad], outline="black")
    draw.line([(pad, size - pad), (size - pad, pad)], fill=(180, 180, 180))
    colours = [(200, 30, 30), (30, 30, 200), (30, 150, 30), (150, 100, 0)]
    for i, (name, roc) in enumerate(sorted(curves.items())):
        pts = [(pad + f * span, size - pad - t * span) for f, t, *_ in roc]
        draw.line(pts, fill=colours[i % len(colours)], width=2)
        draw.text((pad + 4, pad + 4 + 12 * i), name, fill=colours[i % len(colours)])
    img.save(path)


def emit_report(out_dir, cfg: ExperimentConfig, sections: dict, manifest: SplitManifest | None = None) -> Path:
    """Write report.json (schema-checked), CSV tables and a ROC PNG under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = {"run": run_manifest(cfg), "config": cfg.values}
    report.update(sections)
    if manifest is not None:
        report["split"] = {"train_items": len(manifest.train_ids), "test_items": len(manifest.test_ids),
                           "fraction": manifest.fraction, "seed": manifest.seed}
        leak = [s.get("leakage") for s in sections.values() if isinstance(s, dict) and "leakage" in s]
        report["leakage"] = {"checked_sections": len(leak),
                             "violations": int(sum(x["violations"] for x in leak if x))}
    report = _jsonable(report)
    validate_report(report)
    (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))

    if "sweep" in sections:
        with open(out_dir / "sweep.csv", "w", newline="") as fh:
            cols = ["model", "add_norm", "add_sch", "train_size", "accuracy", "loss", "epochs", "seed"]
            w = csv.DictWriter(fh, cols, extrasaction="ignore")
            w.writeheader()
            w.writerows(sections["sweep"]["rows"])
    if "final" in sections:
        rows = sections["final"]["rows"]
        with open(out_dir / "final.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["model", "accuracy", "f1", "sensitivity", "specificity", "auc", "loss"])
            for name, r in rows.items():
                w.writerow([name] + [r.get(k) for k in ("accuracy", "f1", "sensitivity", "specificity", "auc",
                                                          "loss")])
        for name, r in rows.items():
            write_roc_csv(r["roc"], out_dir / f"roc_{name}.csv")
        _draw_roc_png({n: r["roc"] for n, r in rows.items()}, out_dir / "roc.png")
    return out_dir / "report.json"
