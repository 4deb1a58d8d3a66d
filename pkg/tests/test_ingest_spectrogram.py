import numpy as np
import pytest
from scipy import signal

from fixtures import make_edf_corpus, toy_signal, write_text_recording
from spectrodx.ingest import (
    CHANNELS_19,
    ChannelCountError,
    DegenerateChannelError,
    EdfHeaderError,
    EdfRecordCountError,
    FormatError,
    IngestError,
    ParseError,
    SegmentationError,
    SubjectRecording,
    build_manifest,
    infer_label,
    read_column_text,
    read_edf,
    read_recording,
    segment_and_concat,
    write_edf,
    zscore_normalize,
)
from spectrodx.spectrogram import (
    SpectrogramDataset,
    StftConfig,
    build_spectrogram_dataset,
    export_png,
    load_archive,
    log_normalize,
    resize_bilinear,
    save_archive,
    stft_power,
)


def _recording(c=16, t=7680, rate=128, label="norm", seed=0):
    x = np.random.default_rng(seed).standard_normal((c, t))
    return SubjectRecording("subj", label, rate, [f"c{i}" for i in range(c)], x)


class TestTextFormat:
    def test_round_trip(self, tmp_path):
        x = np.round(np.random.default_rng(0).standard_normal((16, 7680)), 4)
        rec = read_column_text(write_text_recording(tmp_path / "norm" / "h01.eea", x))
        assert rec.label == "norm" and rec.sampling_rate_hz == 128 and rec.subject_id == "h01"
        np.testing.assert_allclose(rec.samples, x, atol=1e-9)

    def test_wrong_line_count(self, tmp_path):
        p = tmp_path / "s1.eea"
        p.write_text("1.0\n" * 100)
        with pytest.raises(FormatError, match="122880"):
            read_column_text(p)

    def test_non_numeric_line(self, tmp_path):
        lines = ["0.5"] * 122880
        lines[17] = "abc"
        p = tmp_path / "s1.eea"
        p.write_text("\n".join(lines))
        with pytest.raises(ParseError, match="line 18"):
            read_column_text(p)

    def test_label_inference(self, tmp_path):
        assert infer_label(tmp_path / "healthy" / "x.eea") == "norm"
        assert infer_label(tmp_path / "sch" / "x.eea") == "sch"
        assert infer_label(tmp_path / "s12.eea") == "sch"
        with pytest.raises(IngestError):
            infer_label(tmp_path / "x.eea")


class TestEdf:
    def test_round_trip_and_truncation(self, tmp_path):
        x = toy_signal("norm", np.random.default_rng(0), rate=250, seconds=800, n_channels=19)
        p = write_edf(tmp_path / "norm" / "a.edf", x, 250, CHANNELS_19)
        rec = read_edf(p)
        assert rec.samples.shape == (19, 185000) and rec.sampling_rate_hz == 250
        quantum = (x.max() - x.min()) / 65535
        assert np.max(np.abs(rec.samples - x[:, :185000])) <= quantum
        assert read_recording(p).samples.shape == (19, 185000)

    def test_channel_count(self, tmp_path):
        p = write_edf(tmp_path / "norm" / "a.edf", np.zeros((3, 250)) + np.arange(250), 250, ["a", "b", "c"])
        with pytest.raises(ChannelCountError):
            read_edf(p)

    def test_record_count_mismatch(self, tmp_path):
        p = write_edf(tmp_path / "norm" / "a.edf", np.random.default_rng(0).random((19, 500)), 250, CHANNELS_19)
        raw = bytearray(p.read_bytes())
        raw[236:244] = b"5       "
        p.write_bytes(bytes(raw))
        with pytest.raises(EdfRecordCountError):
            read_edf(p)

    def test_partial_record(self, tmp_path):
        p = write_edf(tmp_path / "norm" / "a.edf", np.random.default_rng(0).random((19, 500)), 250, CHANNELS_19)
        p.write_bytes(p.read_bytes()[:-3])
        with pytest.raises(EdfRecordCountError):
            read_edf(p)

    def test_short_header(self, tmp_path):
        p = tmp_path / "norm" / "bad.edf"
        p.parent.mkdir()
        p.write_bytes(b"0" * 100)
        with pytest.raises(EdfHeaderError):
            read_edf(p)


class TestNormalizeSegment:
    def test_zscore(self):
        z, stats = zscore_normalize(_recording())
        np.testing.assert_allclose(z.samples.mean(axis=1), 0, atol=1e-12)
        np.testing.assert_allclose(z.samples.std(axis=1), 1, atol=1e-12)
        assert stats.mean.shape == (16,)

    def test_flat_channel(self):
        rec = _recording()
        rec.samples[3] = 2.0
        with pytest.raises(DegenerateChannelError, match="c3"):
            zscore_normalize(rec)

    def test_text_segments(self):
        segs = segment_and_concat(_recording())
        assert len(segs) == 12 and all(s.data.shape == (10240,) for s in segs)

    def test_edf_segments(self):
        segs = segment_and_concat(_recording(19, 185000, 250))
        assert len(segs) == 148 and segs[0].data.shape == (23750,)

    def test_channel_major_layout(self):
        rec = _recording(c=3, t=1280)
        seg = segment_and_concat(rec)[1]
        w = 640
        for k in (0, 5, w, 2 * w + 7):
            assert seg.data[k] == rec.samples[k // w, w + k % w]

    def test_too_short(self):
        with pytest.raises(SegmentationError):
            segment_and_concat(_recording(t=100))

    def test_bad_rate(self):
        with pytest.raises(ValueError):
            _recording(rate=200)


class TestStft:
    def test_shapes(self):
        assert stft_power(np.zeros(10240)).shape == (512, 32)
        assert stft_power(np.zeros(23750)).shape == (512, 75)

    def test_matches_scipy(self):
        x = np.random.default_rng(0).standard_normal(10240)
        cfg = StftConfig()
        _, _, s = signal.spectrogram(x, window=("tukey", 0.25), nperseg=360, noverlap=45, nfft=1022,
                                     detrend=False, mode="complex", scaling="spectrum")
        ref = np.abs(s * cfg.window().sum()) ** 2
        np.testing.assert_allclose(stft_power(x, cfg), ref, rtol=1e-9, atol=1e-9)

    def test_constant_detrend_removes_dc(self):
        x = np.full(10240, 5.0)
        assert np.max(stft_power(x, StftConfig(detrend="constant"))) < 1e-18
        assert stft_power(x)[0].min() > 0

    def test_sinusoid_peak_bin(self):
        t = np.arange(10240) / 128
        p = stft_power(np.sin(2 * np.pi * 20 * t))
        freqs = np.fft.rfftfreq(1022, 1 / 128)
        assert abs(freqs[p.mean(axis=1).argmax()] - 20) < 128 / 1022

    def test_config_validation(self):
        with pytest.raises(ValueError):
            StftConfig(nperseg=2000)
        with pytest.raises(ValueError):
            StftConfig(noverlap=360)
        with pytest.raises(ValueError):
            StftConfig(detrend="linear")

    def test_log_normalize(self):
        v = log_normalize(np.array([[1.0, 10.0], [100.0, 1000.0]]))
        np.testing.assert_allclose(v, [[0, 1 / 3], [2 / 3, 1]])
        assert np.all(log_normalize(np.full((3, 3), 7.0)) == 0)
        with pytest.raises(ValueError):
            log_normalize(np.array([[-1.0]]))

    def test_resize_corners_and_linearity(self):
        img = np.add.outer(np.arange(512) * 2.0, np.arange(32) * 3.0)
        out = resize_bilinear(img)
        assert out.shape == (128, 128)
        assert out[0, 0] == img[0, 0] and out[-1, -1] == img[-1, -1]
        # bilinear interpolation reproduces an affine image exactly
        rows = np.arange(128) * 511 / 127
        cols = np.arange(128) * 31 / 127
        np.testing.assert_allclose(out, np.add.outer(rows * 2.0, cols * 3.0), atol=1e-9)


class TestDataset:
    def test_build_save_load(self, tmp_path):
        rng = np.random.default_rng(0)
        recs = [zscore_normalize(SubjectRecording(f"s{i}", lbl, 128, [f"c{j}" for j in range(16)],
                                                  toy_signal(lbl, rng)))[0]
                for i, lbl in enumerate(["norm", "sch"])]
        ds = build_spectrogram_dataset(recs)
        assert len(ds) == 24 and ds.native.shape == (24, 512, 32) and ds.classifier.shape == (24, 128, 128)
        assert ds.native.min() == 0 and ds.native.max() == 1
        assert ds.keys[0] == "real:s0:0"
        save_archive(tmp_path / "a", ds)
        back = load_archive(tmp_path / "a")
        np.testing.assert_array_equal(back.native, ds.native)
        assert back.keys == ds.keys and list(back.labels) == list(ds.labels)
        assert export_png(ds.native[0], tmp_path / "p.png").exists()

    def test_edf_corpus_shapes(self, tmp_path):
        paths = make_edf_corpus(tmp_path, 1, 0, seconds=760)
        rec = zscore_normalize(read_edf(paths[0]))[0]
        ds = build_spectrogram_dataset([rec])
        assert ds.native.shape == (148, 512, 75)

    def test_from_native_and_class_filter(self):
        a = SpectrogramDataset.from_native(np.zeros((2, 512, 32)), "sch", "vae", "g")
        b = SpectrogramDataset.from_native(np.zeros((3, 512, 32)), "norm", "real", "r")
        both = a.concat(b)
        assert len(both.of_class("norm")) == 3 and set(both.of_class("sch").origins) == {"vae"}
        assert len(SpectrogramDataset.empty().concat(a)) == 2


def test_manifest(tmp_path):
    x = np.round(np.random.default_rng(0).standard_normal((16, 7680)), 3)
    rec = read_column_text(write_text_recording(tmp_path / "sch" / "s1.eea", x))
    entries = build_manifest([rec], tmp_path / "m.json")
    assert entries[0]["segments"] == 12 and len(entries[0]["checksum"]) == 64
    assert (tmp_path / "m.json").exists()
