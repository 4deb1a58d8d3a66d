"""Acceptance checks. Each test prints one PASS/FAIL line; conftest repeats them in the summary.

The slow ones (eight-Gaussian WGAN, VAE sanity, end-to-end CLI) take a few minutes each on one CPU.
"""
import json
import os
from pathlib import Path

import numpy as np
import pytest

from acceptance_log import INVARIANTS, record
from fixtures import make_text_corpus
from gradcheck import all_cases
from oracles import conv_param_count, dense_param_count, mann_whitney_auc, spreadsheet_metrics
from spectrodx import cli
from spectrodx.autodiff import Network, Tensor, load_checkpoint, no_grad
from spectrodx.classifier import PROPOSED_PARAM_COUNT, build_proposed_cnn
from spectrodx.generative import (
    GenerativeSchedule,
    GpConfig,
    build_wgan,
    critic_layers,
    generator_layers,
    synthetic_dataset,
    train_vae,
    train_wgan,
    vae_encoder_layers,
)
from spectrodx.ingest import SubjectRecording, zscore_normalize
from spectrodx.lime import SurrogateConfig, explain_instance, grid_segment
from spectrodx.metrics import UNDEFINED, ConfusionCounts, confusion_metrics, roc_auc
from spectrodx.pipeline import SplitManifest, build_scaled_vae, check_no_leakage, split_before_augment
from spectrodx.spectrogram import build_spectrogram_dataset, load_archive
from spectrodx.tsne import TsneConfig, silhouette, tsne_embed


def _recordings(n, channels, samples, rate, seed):
    rng = np.random.default_rng(seed)
    for i in range(n):
        label = "norm" if i % 2 else "sch"
        x = rng.standard_normal((channels, samples))
        yield zscore_normalize(SubjectRecording(f"{label}{i:03d}", label, rate, [f"c{j}" for j in range(channels)], x))[0]


def test_criterion_1_shape_identities():
    small = build_spectrogram_dataset(list(_recordings(84, 16, 7680, 128, 0)))
    count19, shapes19 = 0, set()
    for rec in _recordings(28, 19, 185000, 250, 1):
        # one subject at a time keeps the 19-channel corpus out of memory
        part = build_spectrogram_dataset([rec])
        count19 += len(part)
        shapes19.add(part.native.shape[1:])
    critic = Network(critic_layers(), (512, 32, 1))
    encoder = Network(vae_encoder_layers(), (512, 32, 1))
    generator = Network(generator_layers(), (128,))
    got = {
        "16ch": (len(small), small.native.shape[1:]),
        "19ch": (count19, sorted(shapes19)),
        "critic_flatten": (8192,) in critic.shapes,
        "vae_flatten": (16384,) in encoder.shapes,
        "generator": generator.output_shape,
    }
    ok = (got["16ch"] == (1008, (512, 32)) and got["19ch"] == (4144, [(512, 75)]) and got["critic_flatten"]
          and got["vae_flatten"] and got["generator"] == (512, 32, 1))
    record(1, ok, f"{got}")
    assert ok


def test_criterion_2_parameter_count():
    oracle = (conv_param_count(3, 3, 1, 32) + conv_param_count(3, 3, 32, 64) + conv_param_count(3, 3, 64, 128)
              + conv_param_count(3, 3, 128, 128) + dense_param_count(8 * 8 * 128, 128) + dense_param_count(128, 2))
    count = build_proposed_cnn().parameter_count
    ok = count == oracle == PROPOSED_PARAM_COUNT == 1_289_218 and 1.2e6 <= count <= 1.4e6
    record(2, ok, f"built {count:,}, per-layer oracle {oracle:,}")
    assert ok


def test_criterion_3_gradient_suite():
    results = [case() for case in all_cases(5, 5)]
    failing = [(r.name, r.error) for r in results if not r.ok]
    worst = max(results, key=lambda r: r.error / r.tolerance)
    ok = len(results) >= 100 and not failing
    record(3, ok, f"{len(results)} cases, failing {failing}, worst {worst.name} err {worst.error:.2e}")
    assert ok


def test_criterion_4_metrics_oracles():
    rng = np.random.default_rng(4)
    metric_err, auc_err = 0.0, 0.0
    undefined_mismatch = 0
    for _ in range(1000):
        tp, tn, fp, fn = (int(v) for v in rng.integers(0, 60, 4) * rng.integers(0, 2, 4))
        m = confusion_metrics(ConfusionCounts(tp, tn, fp, fn))
        for got, want in zip((m.accuracy, m.sensitivity, m.specificity, m.f1), spreadsheet_metrics(tp, tn, fp, fn)):
            if want is None:
                undefined_mismatch += got is not UNDEFINED
            else:
                metric_err = max(metric_err, abs(got - want))
    for _ in range(1000):
        n = int(rng.integers(2, 200))
        truth = rng.integers(0, 2, n)
        truth[:2] = [0, 1]
        scores = np.round(rng.random(n), int(rng.integers(1, 4)))  # coarse rounding makes ties
        auc_err = max(auc_err, abs(roc_auc(scores, truth)[1] - mann_whitney_auc(scores, truth)))
    ok = metric_err <= 1e-12 and auc_err <= 1e-9 and undefined_mismatch == 0
    record(4, ok, f"max metric err {metric_err:.1e}, max AUC err {auc_err:.1e}, undefined mismatches "
                  f"{undefined_mismatch}")
    assert ok


# ---------------------------------------------------------------------------
# generative sanity
# ---------------------------------------------------------------------------

def _ring(n, rng, radius=2.0, std=0.02):
    angle = 2 * np.pi * rng.integers(0, 8, n) / 8
    return np.c_[radius * np.cos(angle), radius * np.sin(angle)] + std * rng.standard_normal((n, 2))


def _mlp(out):
    return [{"type": "dense", "units": 128, "activation": "relu"} for _ in range(3)] + [{"type": "dense", "units": out}]


def _toy_wgan(data, epochs):
    model = build_wgan(0, np.float64, (2,), noise_dim=2, generator=_mlp(2), critic=_mlp(1))
    sched = GenerativeSchedule(epochs=epochs, batch_size=256, learning_rate=1e-4, beta1=0.5, beta2=0.9,
                               gp=GpConfig(lambda_gp=0.1, n_critic=5))
    return model, train_wgan(model, data, sched, seed=0)


def test_criterion_5_wgan_eight_gaussians():
    data = _ring(12800, np.random.default_rng(0))
    # 12800 / 256 = 50 batches -> 10 generator steps per epoch, 2000 in total
    model, hist = _toy_wgan(data, 200)
    w = np.array([r["wasserstein"] for r in hist])
    with no_grad():
        s = model.generator(Tensor(np.random.default_rng(1).standard_normal((2000, 2))), training=False).data
    centres = 2.0 * np.c_[np.cos(2 * np.pi * np.arange(8) / 8), np.sin(2 * np.pi * np.arange(8) / 8)]
    d = np.linalg.norm(s[:, None] - centres[None], axis=2)
    near = d.min(axis=1) < 0.2
    per_mode = np.bincount(d.argmin(axis=1)[near], minlength=8)
    modes = int((per_mode >= 40).sum())
    final_ratio = w[-1] / w.max()

    again = [_toy_wgan(data[:2560], 2)[1] for _ in range(2)]
    INVARIANTS[5] = {"leakage": None, "determinism": again[0] == again[1]}
    ok = final_ratio < 0.25 and modes >= 6
    record(5, ok, f"W peak {w.max():.3f} final {w[-1]:.3f} ({final_ratio:.1%} of peak), modes {modes}/8 "
                  f"(per mode {per_mode.tolist()}), generator steps {sum(r['generator_steps'] for r in hist)}")
    assert ok


def ridge_family(n, seed, shape=(512, 32)):
    """Spectrogram-like images: harmonic ridges above a fundamental row, switching on at a random column."""
    rng = np.random.default_rng(seed)
    rows = np.arange(shape[0])[:, None]
    cols = np.arange(shape[1])[None, :]
    out = np.full((n,) + shape, 0.02)
    for i in range(n):
        r0 = rng.uniform(20, 120)
        t0 = rng.integers(0, shape[1] // 2)
        for k in range(1, 6):
            if r0 * k >= shape[0]:
                break
            ridge = 0.95 * 0.85 ** (k - 1) * np.exp(-0.5 * ((rows - r0 * k) / 3.0) ** 2)
            out[i] = np.maximum(out[i], ridge * (cols >= t0))
    return np.clip(out + 0.01 * rng.standard_normal(out.shape), 0, 1).astype(np.float32)


def _bce(p, x):
    p = np.clip(p, 1e-7, 1 - 1e-7)
    return float(np.mean(-(x * np.log(p) + (1 - x) * np.log(1 - p))))


def test_criterion_6_vae_beats_mean_image():
    data = ridge_family(250, 0)
    train, held = data[:200], data[200:]
    model = build_scaled_vae(0, (512, 32, 1), divisor=8)
    train_vae(model, train[..., None], GenerativeSchedule(epochs=100, batch_size=32, learning_rate=1e-3), seed=0)
    with no_grad():
        mu, _ = model.encode(Tensor(held[..., None]))
        recon = np.asarray(model.decode(mu)).reshape(held.shape)
    baseline = _bce(np.broadcast_to(train.mean(axis=0), held.shape), held)
    ours = _bce(recon, held)
    gain = 1 - ours / baseline

    # held-out images never appear among the training images
    disjoint = not any(np.array_equal(h, t) for h in held for t in train)
    runs = []
    for _ in range(2):
        m = build_scaled_vae(0, (512, 32, 1), divisor=8)
        runs.append((train_vae(m, train[:32, ..., None], GenerativeSchedule(epochs=1, learning_rate=1e-3), seed=0),
                     [p.data.copy() for p in m.parameters()]))
    same = runs[0][0] == runs[1][0] and all(np.array_equal(a, b) for a, b in zip(runs[0][1], runs[1][1]))
    INVARIANTS[6] = {"leakage": disjoint, "determinism": same}
    ok = gain >= 0.20
    record(6, ok, f"held-out BCE {ours:.4f} vs mean-image {baseline:.4f}, improvement {gain:.1%}")
    assert ok


# ---------------------------------------------------------------------------
# explanation and embedding
# ---------------------------------------------------------------------------

def test_criterion_7_lime_planted_recovery():
    seg = grid_segment((128, 128), 16)
    beta = np.random.default_rng(7).standard_normal(64)
    scale = 0.3 / np.abs(beta).sum()  # keeps every perturbed probability inside [0.2, 0.8]

    def predict(images):
        means = np.stack([images[:, seg.labels == k].mean(axis=1) for k in range(64)], axis=1)
        p = 0.5 + scale * (means - 1.0) @ beta
        assert np.all((p > 0) & (p < 1))
        return np.stack([1 - p, p], axis=1)

    image = np.ones((128, 128))
    cfg = SurrogateConfig(num_samples=1000, replacement="zero", seed=0)
    expl = explain_instance(predict, image, seg, cfg, target_class=1)
    # with zero fill a switched-off cell moves p by -scale * beta_k, so the planted mask coefficients are scale * beta
    r = float(np.corrcoef(expl.weights, scale * beta)[0, 1])
    again = explain_instance(predict, image, seg, cfg, target_class=1)
    INVARIANTS[7] = {"leakage": None, "determinism": np.array_equal(expl.weights, again.weights)}
    ok = r >= 0.95 and seg.n_segments == 64
    record(7, ok, f"Pearson r {r:.4f} at N=1000 over {seg.n_segments} superpixels")
    assert ok


def test_criterion_8_tsne_clusters():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((200, 1024))
    direction = rng.standard_normal(1024)
    x[100:] += 10.0 * direction / np.linalg.norm(direction)
    labels = np.r_[np.zeros(100), np.ones(100)]
    cfg = TsneConfig(seed=0)
    coords, hist = tsne_embed(x, cfg)
    score = silhouette(coords, labels)
    first, last = hist[0][1], hist[-1][1]
    INVARIANTS[8] = {"leakage": None, "determinism": np.array_equal(coords, tsne_embed(x, cfg)[0])}
    ok = score > 0.5 and last < first
    record(8, ok, f"silhouette {score:.3f}, KL {first:.3f} -> {last:.3f}")
    assert ok


# ---------------------------------------------------------------------------
# end to end through the CLI
# ---------------------------------------------------------------------------

def test_criterion_9_end_to_end(tmp_path, monkeypatch):
    make_text_corpus(tmp_path / "data", 8, 8, seed=0)
    monkeypatch.setenv(cli.ENV_OUTPUT_ROOT, str(tmp_path))
    settings = ["data_dir=" + str(tmp_path / "data"), "output_dir=run", "cnn.learning_rate=1e-4", "cnn.epochs=12",
                "generative.width_divisor=8", "generative.vae_epochs=60", "generative.vae_learning_rate=1e-3",
                "final.model=vae", "final.add_norm=70", "final.add_sch=70", "final.learning_rate=1e-4",
                "final.epochs=12"]

    def run(*argv):
        args = list(argv)
        for s in settings:
            args += ["-s", s]
        return cli.main(args)

    stages = [("ingest",), ("spectrogram",), ("train-cnn",), ("train-gen", "--kind", "vae", "--class", "norm"),
              ("train-gen", "--kind", "vae", "--class", "sch"), ("final",), ("report",)]
    codes = {s[0] if len(s) == 1 else f"{s[0]}:{s[-1]}": run(*s) for s in stages}
    out = tmp_path / "run"
    assert all(c == 0 for c in codes.values()), codes

    baseline = json.loads((out / "cnn" / "metrics.json").read_text())["accuracy"]
    final = json.loads((out / "final.json").read_text())
    aug, plain = final["rows"]["VAE-70"], final["rows"]["Non-augmented"]

    data = load_archive(out / "spectrograms" / "real")
    manifest = SplitManifest.load(out / "split.json")
    fresh = split_before_augment(data, 0.2, 0)
    ckpt = load_checkpoint(out / "models" / "vae-sch.sdx")
    draws = [synthetic_dataset(ckpt, 5, "sch", 11).native for _ in range(2)]
    leak = final["leakage"]
    INVARIANTS[9] = {
        "leakage": leak["violations"] == 0 and leak["synthetic_train_items"] == 140
        and check_no_leakage(manifest)["violations"] == 0,
        "determinism": fresh.test_ids == manifest.test_ids and np.array_equal(draws[0], draws[1]),
    }
    report_ok = (out / "report" / "report.json").exists()
    ok = baseline >= 0.95 and aug["accuracy"] >= plain["accuracy"] - 0.01 and report_ok
    record(9, ok, f"baseline test acc {baseline:.3f} on {len(manifest.test_ids)} test items; "
                  f"VAE-70 {aug['accuracy']:.3f} (loss {aug['loss']:.3f}, n={aug['train_size']}) vs "
                  f"non-augmented {plain['accuracy']:.3f} (loss {plain['loss']:.3f}, n={plain['train_size']})")
    assert ok


def test_criterion_10_leakage_and_determinism():
    missing = [n for n in (5, 6, 7, 8, 9) if n not in INVARIANTS]
    bad = {n: v for n, v in INVARIANTS.items() if v["leakage"] is False or not v["determinism"]}
    ok = not missing and not bad
    summary = ", ".join(f"{n}: leakage {'n/a' if v['leakage'] is None else 'ok' if v['leakage'] else 'FAIL'} "
                        f"determinism {'ok' if v['determinism'] else 'FAIL'}" for n, v in sorted(INVARIANTS.items()))
    record(10, ok, f"{summary}" + (f"; not run: {missing}" if missing else ""))
    assert ok


DATA_ENV = "SPECTRODX_REAL_DATA"


def test_criterion_11_real_data_stretch():
    root = os.environ.get(DATA_ENV)
    if not root or not Path(root).is_dir():
        record(11, False, f"not run: public datasets absent (set {DATA_ENV} to the 16-channel corpus); "
                          "full-budget training is also outside the single-CPU budget")
        pytest.skip("real datasets not available")
    record(11, False, f"not run: {DATA_ENV} is set but full-budget training is not part of the test run")
    pytest.skip(f"{DATA_ENV} is set; run `spectrodx` stages with data_dir={root} and default config, then "
                "compare report.json against the reference accuracies")
