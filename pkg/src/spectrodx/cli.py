"""Command-line entry point: ``spectrodx <stage> [options]``.

Every stage reads and writes a fixed layout under the run directory
(``$SPECTRODX_OUTPUT_ROOT/<output_dir>`` when the variable is set).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .autodiff import CheckpointError, ModelCheckpoint, NonFiniteGradientError, load_checkpoint, save_checkpoint
from .classifier import CnnClassifier, TrainConfig, build_proposed_cnn, predict, train_classifier
from .generative import GenerativeSchedule, GpConfig, train_generative
from .ingest import (
    IngestError,
    SubjectRecording,
    build_manifest,
    discover,
    read_column_text,
    read_edf,
    zscore_normalize,
)
from .lime import SurrogateConfig, explain_instance, grid_segment, render_heatmap
from .metrics import evaluate_scores, write_roc_csv
from .pipeline import (
    ConfigError,
    ExperimentConfig,
    LeakageError,
    SplitManifest,
    apply_split,
    build_scaled_vae,
    build_scaled_wgan,
    emit_report,
    run_final_comparison,
    run_sweep,
    split_before_augment,
)
from .spectrogram import StftConfig, build_spectrogram_dataset, export_png, load_archive, save_archive
from .synth_eval import fit_latent_autoencoder, latent_audit, train_on_synthetic_protocol, write_embedding_csv
from .tsne import TsneConfig

log = logging.getLogger("spectrodx")

ENV_OUTPUT_ROOT = "SPECTRODX_OUTPUT_ROOT"
EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4
CLASSES = ("norm", "sch")
GEN_KINDS = ("vae", "wgan")


class Run:
    """Paths and lazily loaded artifacts of one run directory."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        root = os.environ.get(ENV_OUTPUT_ROOT)
        self.dir = (Path(root) / cfg.output_dir) if root else cfg.output_dir
        self.dir.mkdir(parents=True, exist_ok=True)

    def path(self, *parts) -> Path:
        p = self.dir.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def write_json(self, name: str, obj) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(obj, indent=2, default=_json_default))
        return p

    def read_json(self, name: str):
        p = self.path(name)
        if not p.exists():
            raise FileNotFoundError(f"{p} not found; run the stage that produces it first")
        return json.loads(p.read_text())

    def dataset(self):
        base = self.path("spectrograms", "real")
        if not Path(str(base) + ".json").exists():
            raise FileNotFoundError(f"{base}.json not found; run `spectrodx spectrogram` first")
        return load_archive(base)

    def split(self):
        """Load the persisted split, creating it the first time."""
        data = self.dataset()
        p = self.path("split.json")
        if p.exists():
            manifest = SplitManifest.load(p)
        else:
            manifest = split_before_augment(data, self.cfg["split"]["fraction"], self.cfg.seed, p)
        train, test = apply_split(data, manifest)
        return manifest, train, test

    def checkpoint_path(self, name: str) -> Path:
        return self.path("models", f"{name}.sdx")

    def save_ckpt(self, name: str, ckpt: ModelCheckpoint) -> Path:
        dt = "<f8" if self.cfg.dtype == np.float64 else "<f4"
        return save_checkpoint(self.checkpoint_path(name), ckpt, dtype=dt)

    def generators(self, kinds) -> dict[str, dict[str, ModelCheckpoint]]:
        out = {}
        for kind in kinds:
            ckpts = {}
            for label in CLASSES:
                p = self.checkpoint_path(f"{kind}-{label}")
                if p.exists():
                    ckpts[label] = load_checkpoint(p)
            if ckpts:
                out[kind] = ckpts
        if not out:
            raise FileNotFoundError("no generative checkpoints found; run `spectrodx train-gen` first")
        return out


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _progress(stage: str):
    def report(row):
        log.info("%s %s", stage, {k: (round(v, 5) if isinstance(v, float) else v) for k, v in row.items()
                                  if not isinstance(v, list)})
    return report


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def cmd_ingest(run: Run, args) -> int:
    cfg = run.cfg
    cfg.validate(check_paths=True)
    files = discover(cfg["data_dir"])
    if not files:
        raise IngestError(f"no recordings under {cfg['data_dir']}")
    recs = []
    for f in files:
        if cfg["channels"] == 19:
            if f.suffix.lower() != ".edf":
                continue
            rec = read_edf(f)
        else:
            if f.suffix.lower() == ".edf":
                continue
            rec = read_column_text(f)
        recs.append(zscore_normalize(rec)[0])
    if not recs:
        raise IngestError(f"no {cfg['channels']}-channel recordings under {cfg['data_dir']}")
    build_manifest(recs, run.path("ingest", "manifest.json"))
    arrays = {f"s{i}": r.samples.astype(np.float32) for i, r in enumerate(recs)}
    np.savez(run.path("ingest", "recordings.npz"), **arrays)
    meta = [{"subject_id": r.subject_id, "label": r.label, "rate": r.sampling_rate_hz, "channels": r.channels,
             "source": r.source} for r in recs]
    run.write_json("ingest/recordings.json", meta)
    log.info("ingested %d recordings", len(recs))
    return EXIT_OK


def _load_recordings(run: Run) -> list[SubjectRecording]:
    meta = run.read_json("ingest/recordings.json")
    with np.load(run.path("ingest", "recordings.npz")) as z:
        return [SubjectRecording(m["subject_id"], m["label"], m["rate"], m["channels"], z[f"s{i}"].astype(np.float64),
                                 m["source"]) for i, m in enumerate(meta)]


def cmd_spectrogram(run: Run, args) -> int:
    s = run.cfg["stft"]
    cfg = StftConfig(nfft=s["nfft"], nperseg=s["nperseg"], noverlap=s["noverlap"], tukey_alpha=s["tukey_alpha"],
                     detrend=s["detrend"])
    data = build_spectrogram_dataset(_load_recordings(run), cfg)
    if len(data) == 0:
        raise IngestError("no spectrograms produced")
    save_archive(run.path("spectrograms", "real"), data)
    for i in range(min(args.previews, len(data))):
        export_png(data.native[i], run.path("spectrograms", "preview", f"{data.keys[i].replace(':', '_')}.png"))
    log.info("built %d spectrograms of %s", len(data), data.native.shape[1:])
    return EXIT_OK


def _cnn_cfg(run: Run, **over) -> TrainConfig:
    c = run.cfg["cnn"]
    base = dict(learning_rate=c["learning_rate"], batch_size=c["batch_size"], epochs=c["epochs"], seed=run.cfg.seed)
    base.update(over)
    return TrainConfig(**base)


def cmd_train_cnn(run: Run, args) -> int:
    manifest, train, test = run.split()
    model = build_proposed_cnn(run.cfg.seed, dtype=run.cfg.dtype)
    model, hist = train_classifier(model, train, _cnn_cfg(run), test, progress=_progress("cnn"))
    hist.to_csv(run.path("cnn", "history.csv"))
    probs = predict(model, test.classifier)
    report = evaluate_scores(probs[:, 1], test.labels)
    write_roc_csv(report.roc, run.path("cnn", "roc.csv"))
    run.write_json("cnn/metrics.json", report.to_dict())
    run.save_ckpt("cnn", ModelCheckpoint("cnn", {"cnn": model.network}, run.cfg.seed, {"class_names": CLASSES}))
    log.info("cnn test metrics %s", report.to_dict())
    return EXIT_OK


def _schedule(run: Run, kind: str) -> GenerativeSchedule:
    g = run.cfg["generative"]
    if kind == "vae":
        sched = GenerativeSchedule.vae_default(g["vae_epochs"])
        sched.learning_rate = g["vae_learning_rate"]
    else:
        sched = GenerativeSchedule.wgan_default(g["wgan_epochs"])
        sched.learning_rate = g["wgan_learning_rate"]
        sched.gp = GpConfig(lambda_gp=g["lambda_gp"], n_critic=g["n_critic"])
    sched.batch_size = g["batch_size"]
    return sched


def cmd_train_gen(run: Run, args) -> int:
    run.cfg.require_generative("train-gen")
    manifest, train, _ = run.split()
    subset = train.of_class(args.label)
    shape = subset.native.shape[1:] + (1,)
    divisor = int(run.cfg["generative"]["width_divisor"])
    build = build_scaled_vae if args.kind == "vae" else build_scaled_wgan
    model = build(run.cfg.seed, shape, divisor, run.cfg.dtype)
    ckpt, hist = train_generative(args.kind, args.label, subset, _schedule(run, args.kind), run.cfg.seed, model,
                                  progress=_progress(f"{args.kind}-{args.label}"))
    ckpt.meta["width_divisor"] = divisor
    run.save_ckpt(f"{args.kind}-{args.label}", ckpt)
    run.write_json(f"generative/{args.kind}-{args.label}-history.json", hist)
    return EXIT_OK


def cmd_sample(run: Run, args) -> int:
    from .generative import synthetic_dataset

    run.cfg.require_generative("sample")
    ckpt = load_checkpoint(run.checkpoint_path(f"{args.kind}-{args.label}"))
    data = synthetic_dataset(ckpt, args.count, args.label, run.cfg.seed if args.seed is None else args.seed)
    save_archive(run.path("synthetic", f"{args.kind}-{args.label}"), data)
    for i in range(min(args.previews, len(data))):
        export_png(data.native[i], run.path("synthetic", "preview", f"{args.kind}-{args.label}-{i}.png"))
    return EXIT_OK


def cmd_sweep(run: Run, args) -> int:
    run.cfg.require_generative("sweep")
    manifest, train, test = run.split()
    sw = run.cfg["sweep"]
    gens = run.generators(sw["models"])
    results = []
    for s in sw["seeds"]:
        res = run_sweep(train, test, manifest, gens, [tuple(r) for r in sw["rows"]], seed=run.cfg.seed + 1000 * s,
                        learning_rate=sw["learning_rate"], max_epochs=sw["max_epochs"], progress=_progress("sweep"))
        results.append(res)
    out = results[0]
    out["per_seed"] = [r["rows"] for r in results]
    run.write_json("sweep.json", out)
    log.info("best sweep row %s", out["best"])
    return EXIT_OK


def cmd_final(run: Run, args) -> int:
    run.cfg.require_generative("final")
    manifest, train, test = run.split()
    f = run.cfg["final"]
    if f["model"] is None:
        best = run.read_json("sweep.json")["best"]
        model, add_norm, add_sch = best["model"], best["add_norm"], best["add_sch"]
    else:
        model, add_norm, add_sch = f["model"], int(f["add_norm"]), int(f["add_sch"])
    gens = run.generators([model])
    res = run_final_comparison(train, test, manifest, gens, model, add_norm, add_sch, seed=run.cfg.seed,
                               learning_rate=f["learning_rate"], epochs=f["epochs"])
    run.write_json("final.json", res)
    for name, row in res["rows"].items():
        log.info("%s: acc %.4f auc %.4f", name, row["accuracy"] or float("nan"), row["auc"])
    return EXIT_OK


def cmd_explain(run: Run, args) -> int:
    manifest, _, test = run.split()
    ckpt = load_checkpoint(run.checkpoint_path("cnn"))
    model = CnnClassifier(ckpt.networks["cnn"])
    lc = run.cfg["lime"]
    segmap = grid_segment((128, 128), lc["cell"])
    scfg = SurrogateConfig(lc["num_samples"], lc["kernel_width"], lc["ridge_alpha"], lc["replacement"], run.cfg.seed)
    summary = []
    for i in range(min(lc["count"], len(test))):
        expl = explain_instance(lambda x: predict(model, x), test.classifier[i], segmap, scfg)
        name = test.keys[i].replace(":", "_")
        render_heatmap(expl, segmap, run.path("explain", f"{name}.png"))
        summary.append({"item": test.keys[i], "target_class": expl.target_class, "fidelity": expl.fidelity})
    run.write_json("explain/summary.json", summary)
    return EXIT_OK


def cmd_audit(run: Run, args) -> int:
    run.cfg.require_generative("audit")
    manifest, train, test = run.split()
    se = run.cfg["synthetic_eval"]
    gens = run.generators(run.cfg["sweep"]["models"])
    tos = train_on_synthetic_protocol(
        gens, test, run.cfg.seed, se["per_class"],
        _cnn_cfg(run, learning_rate=se["learning_rate"], epochs=se["epochs"]))
    for r in tos.values():
        r.pop("history", None)
    ae = fit_latent_autoencoder(train, run.cfg.seed, epochs=se["autoencoder_epochs"], dtype=run.cfg.dtype,
                                progress=_progress("autoencoder"))
    real = train.concat(test)
    from .generative import synthetic_dataset

    synth = {}
    for kind, ckpts in gens.items():
        per = max(1, se["audit_samples"] // len(ckpts))
        parts = [synthetic_dataset(c, per, label, run.cfg.seed + 7) for label, c in sorted(ckpts.items())]
        data = parts[0]
        for p in parts[1:]:
            data = data.concat(p)
        synth[kind] = data
    t = run.cfg["tsne"]
    tcfg = TsneConfig(perplexity=t["perplexity"], iterations=t["iterations"], learning_rate=t["learning_rate"],
                      early_exaggeration=t["early_exaggeration"], exaggeration_iters=t["exaggeration_iters"],
                      seed=run.cfg.seed)
    audit = latent_audit(ae, real, synth, tcfg)
    write_embedding_csv(audit, run.path("audit", "embedding.csv"))
    run.write_json("audit.json", {"train_on_synthetic": tos, "audit": audit.to_dict(),
                                  "autoencoder_history": ae.history})
    return EXIT_OK


def cmd_report(run: Run, args) -> int:
    manifest = SplitManifest.load(run.path("split.json"))
    sections = {}
    for name in ("sweep", "final"):
        p = run.path(f"{name}.json")
        if p.exists():
            sections[name] = json.loads(p.read_text())
    if run.path("audit.json").exists():
        a = run.read_json("audit.json")
        sections["train_on_synthetic"] = a["train_on_synthetic"]
        sections["audit"] = a["audit"]
    if run.path("cnn", "metrics.json").exists():
        sections["cnn"] = run.read_json("cnn/metrics.json")
    if "final" in sections:
        for row in sections["final"]["rows"].values():
            row.pop("history", None)
    path = emit_report(run.path("report"), run.cfg, sections, manifest)
    print(path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="YAML or JSON experiment config")
    common.add_argument("-s", "--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. cnn.epochs=5 (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    # options live on the subcommands only: argparse lets subparser defaults overwrite top-level values
    parser = argparse.ArgumentParser(prog="spectrodx",
                                     description="EEG spectrogram classification with generative augmentation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="read and z-score raw recordings")
    p.set_defaults(func=cmd_ingest)
    p = sub.add_parser("spectrogram", parents=[common], help="segment and transform to spectrograms")
    p.add_argument("--previews", type=int, default=2)
    p.set_defaults(func=cmd_spectrogram)
    p = sub.add_parser("train-cnn", parents=[common], help="split (once) and train the classifier")
    p.set_defaults(func=cmd_train_cnn)
    p = sub.add_parser("train-gen", parents=[common], help="train one per-class generative model")
    p.add_argument("--kind", choices=GEN_KINDS, required=True)
    p.add_argument("--class", dest="label", choices=CLASSES, required=True)
    p.set_defaults(func=cmd_train_gen)
    p = sub.add_parser("sample", parents=[common], help="draw synthetic spectrograms from a checkpoint")
    p.add_argument("--kind", choices=GEN_KINDS, required=True)
    p.add_argument("--class", dest="label", choices=CLASSES, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--previews", type=int, default=2)
    p.set_defaults(func=cmd_sample)
    p = sub.add_parser("sweep", parents=[common], help="augmentation-size sweep")
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("final", parents=[common], help="augmented vs non-augmented comparison")
    p.set_defaults(func=cmd_final)
    p = sub.add_parser("explain", parents=[common], help="LIME heatmaps for test items")
    p.set_defaults(func=cmd_explain)
    p = sub.add_parser("audit", parents=[common], help="train-on-synthetic and latent t-SNE audit")
    p.set_defaults(func=cmd_audit)
    p = sub.add_parser("report", parents=[common], help="collect results into a validated report")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config, args.set)
        return args.func(Run(cfg), args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (IngestError, LeakageError, CheckpointError, FileNotFoundError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except (NonFiniteGradientError, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except Exception as exc:  # noqa: BLE001 - last resort so scripts always see a status code
        log.exception("failed: %s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
