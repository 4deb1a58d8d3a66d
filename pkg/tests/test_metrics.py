import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import mann_whitney_auc, spreadsheet_metrics
from spectrodx.metrics import UNDEFINED, ConfusionCounts, confusion_metrics, evaluate_scores, roc_auc, write_roc_csv


class TestConfusionMetrics:
    def test_reported_counts(self):
        m = confusion_metrics(ConfusionCounts(tp=110, tn=92, fp=0, fn=2))
        assert round(m.accuracy, 3) == 0.990
        assert round(m.sensitivity, 3) == 0.982
        assert m.specificity == 1.0
        assert round(m.f1, 3) == 0.991

    def test_perfect(self):
        m = confusion_metrics(ConfusionCounts(5, 7, 0, 0))
        assert (m.accuracy, m.sensitivity, m.specificity, m.f1) == (1.0, 1.0, 1.0, 1.0)

    def test_undefined_marker(self):
        m = confusion_metrics(ConfusionCounts(0, 4, 1, 0))
        assert m.sensitivity is UNDEFINED and m.f1 == 0.0
        d = m.to_dict()
        assert d["sensitivity"] is None and d["undefined"] == ["sensitivity"]
        json.dumps(d)
        empty = confusion_metrics(ConfusionCounts(0, 0, 0, 0))
        assert all(v is UNDEFINED for v in (empty.accuracy, empty.sensitivity, empty.specificity, empty.f1))

    def test_negative_counts(self):
        with pytest.raises(ValueError):
            ConfusionCounts(-1, 0, 0, 0)

    def test_from_predictions(self):
        c = ConfusionCounts.from_predictions([1, 1, 0, 0, 1], [1, 0, 0, 1, 1])
        assert (c.tp, c.tn, c.fp, c.fn) == (2, 1, 1, 1)

    @given(st.integers(0, 300), st.integers(0, 300), st.integers(0, 300), st.integers(0, 300))
    @settings(max_examples=200, deadline=None)
    def test_formula_oracle(self, tp, tn, fp, fn):
        m = confusion_metrics(ConfusionCounts(tp, tn, fp, fn))
        for got, want in zip((m.accuracy, m.sensitivity, m.specificity, m.f1), spreadsheet_metrics(tp, tn, fp, fn)):
            if want is None:
                assert got is UNDEFINED
            else:
                assert abs(got - want) <= 1e-12


class TestRoc:
    def test_perfect_separation(self):
        roc, auc = roc_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
        assert auc == 1.0 and roc[0][:2] == (0.0, 0.0) and roc[-1][:2] == (1.0, 1.0)

    def test_random_scores_half(self):
        rng = np.random.default_rng(0)
        _, auc = roc_auc(rng.random(20000), rng.integers(0, 2, 20000))
        assert abs(auc - 0.5) <= 0.05

    def test_sign_reversal(self):
        rng = np.random.default_rng(1)
        s, y = rng.random(200), rng.integers(0, 2, 200)
        assert abs(roc_auc(s, y)[1] + roc_auc(-s, y)[1] - 1.0) < 1e-12

    def test_ties_form_one_step(self):
        roc, auc = roc_auc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0])
        assert [p[:2] for p in roc] == [(0.0, 0.0), (1.0, 1.0)] and auc == 0.5

    def test_single_class(self):
        with pytest.raises(ValueError):
            roc_auc([0.1, 0.2], [1, 1])

    @given(st.lists(st.tuples(st.integers(0, 10), st.booleans()), min_size=2, max_size=60))
    @settings(max_examples=200, deadline=None)
    def test_mann_whitney_and_monotone(self, pairs):
        scores = np.array([p[0] for p in pairs], dtype=float) / 10
        truth = np.array([p[1] for p in pairs])
        if truth.all() or not truth.any():
            return
        roc, auc = roc_auc(scores, truth)
        assert abs(auc - mann_whitney_auc(scores, truth)) <= 1e-9
        f, t = np.array([p[0] for p in roc]), np.array([p[1] for p in roc])
        assert np.all(np.diff(f) >= 0) and np.all(np.diff(t) >= 0)
        perm = np.random.default_rng(len(pairs)).permutation(len(pairs))
        assert roc_auc(scores[perm], truth[perm])[1] == auc

    def test_report_and_csv(self, tmp_path):
        r = evaluate_scores([0.9, 0.4, 0.6, 0.1], [1, 1, 0, 0])
        assert r.accuracy == 0.5 and r.auc == 0.75
        write_roc_csv(r.roc, tmp_path / "roc.csv")
        assert (tmp_path / "roc.csv").read_text().startswith("fpr,tpr,threshold\n0.0,0.0,inf")
