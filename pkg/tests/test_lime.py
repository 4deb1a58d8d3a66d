import json

import numpy as np
import pytest

from spectrodx.lime import (
    Explanation,
    SurrogateConfig,
    explain_instance,
    grid_segment,
    perturb,
    render_heatmap,
)


def planted_model(beta, segmap, scale=1.0):
    """Class-1 probability that is linear in the superpixel means."""
    def predict(images):
        means = np.stack([images[:, segmap.labels == k].mean(axis=1) for k in range(segmap.n_segments)], axis=1)
        p = 0.5 + scale * (means @ beta)
        p = np.clip(p, 0.0, 1.0)
        return np.stack([1 - p, p], axis=1)
    return predict


class TestGrid:
    def test_counts(self):
        assert grid_segment((128, 128), 16).n_segments == 64
        assert grid_segment((128, 128), 128).n_segments == 1

    def test_indexing_oracle(self):
        m = grid_segment(np.zeros((128, 128)), 32)
        for r, c in [(0, 0), (31, 32), (127, 127), (64, 5)]:
            assert m.labels[r, c] == (r // 32) * 4 + c // 32
        assert set(np.unique(m.labels)) == set(range(16))

    def test_non_divisor(self):
        with pytest.raises(ValueError):
            grid_segment((128, 128), 24)


class TestExplain:
    def test_single_planted_feature(self):
        seg = grid_segment((128, 128), 16)
        img = np.random.default_rng(0).random((128, 128)) * 0.2 + 0.4
        beta = np.zeros(64)
        beta[13] = 0.8
        e = explain_instance(planted_model(beta, seg), img, seg, SurrogateConfig(), target_class=1)
        assert np.argmax(np.abs(e.weights)) == 13

    def test_constant_model(self):
        seg = grid_segment((128, 128), 16)
        e = explain_instance(lambda x: np.tile([0.3, 0.7], (len(x), 1)), np.ones((128, 128)), seg)
        assert np.max(np.abs(e.weights)) <= 1e-6 and e.target_class == 1

    def test_invalid_probabilities(self):
        seg = grid_segment((128, 128), 64)
        with pytest.raises(ValueError, match="probability"):
            explain_instance(lambda x: np.tile([2.0, -1.0], (len(x), 1)), np.ones((128, 128)), seg,
                             SurrogateConfig(num_samples=10))

    def test_config_validation(self):
        seg = grid_segment((128, 128), 16)
        with pytest.raises(ValueError):
            explain_instance(lambda x: x, np.ones((128, 128)), seg, SurrogateConfig(num_samples=10))
        with pytest.raises(ValueError):
            explain_instance(lambda x: x, np.ones((128, 128)), seg, SurrogateConfig(kernel_width=0))

    def test_seed_determinism_and_mask_zero(self):
        seg = grid_segment((128, 128), 16)
        img = np.random.default_rng(1).random((128, 128))
        beta = np.random.default_rng(2).standard_normal(64) * 0.3
        seen = []

        def predict(x):
            seen.append(x.copy())
            return planted_model(beta, seg, 0.05)(x)

        a = explain_instance(predict, img, seg, SurrogateConfig(seed=4))
        np.testing.assert_array_equal(seen[0][0], img)
        b = explain_instance(planted_model(beta, seg, 0.05), img, seg, SurrogateConfig(seed=4))
        np.testing.assert_array_equal(a.weights, b.weights)
        assert np.linalg.norm(a.weights) > 0 and a.fidelity <= 1.0

    def test_stability_with_more_samples(self):
        seg = grid_segment((128, 128), 16)
        img = np.random.default_rng(1).random((128, 128))
        beta = np.random.default_rng(2).standard_normal(64) * 0.3
        w1 = explain_instance(planted_model(beta, seg, 0.05), img, seg, SurrogateConfig(num_samples=1000)).weights
        w4 = explain_instance(planted_model(beta, seg, 0.05), img, seg, SurrogateConfig(num_samples=4000)).weights
        assert np.linalg.norm(w4 - w1) / np.linalg.norm(w4) <= 0.10

    def test_zero_fill(self):
        seg = grid_segment((4, 4), 2)
        out = perturb(np.full((4, 4), 3.0), seg, np.array([[1, 0, 1, 1]]), "zero")
        assert out[0, 0, 2] == 0.0 and out[0, 0, 0] == 3.0
        with pytest.raises(ValueError):
            perturb(np.ones((4, 4)), seg, np.ones((1, 4)), "blur")


class TestHeatmap:
    def _expl(self, w):
        return Explanation(np.asarray(w, float), 0.0, 1.0, 1, SurrogateConfig())

    def test_single_bright_cell(self, tmp_path):
        seg = grid_segment((128, 128), 16)
        w = np.zeros(64)
        w[5] = -2.0
        heat = render_heatmap(self._expl(w), seg, tmp_path / "h.png")
        assert heat.max() == 1.0 and np.sum(heat == 1.0) == 256
        assert np.all(heat[seg.labels == 5] == 1.0)
        side = json.loads((tmp_path / "h.json").read_text())
        assert side["config"]["num_samples"] == 1000 and len(side["weights"]) == 64
        assert (tmp_path / "h.png").exists()

    def test_equal_weights_zero(self):
        seg = grid_segment((128, 128), 16)
        assert np.all(render_heatmap(self._expl(np.full(64, 0.3)), seg) == 0)

    def test_piecewise_constant(self):
        seg = grid_segment((128, 128), 16)
        heat = render_heatmap(self._expl(np.random.default_rng(0).standard_normal(64)), seg)
        for k in range(64):
            assert np.ptp(heat[seg.labels == k]) == 0
