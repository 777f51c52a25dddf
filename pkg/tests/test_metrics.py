import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pcgvae.metrics import (REPORT_COLUMNS, PUBLISHED_MODEL_ROWS, BinaryCounts, average_reports, collapse_binary,
                            confusion_counts, discriminant_power, evaluate, per_class_precision, roc_auc, sensitivity,
                            specificity, total_precision, youden)
from pcgvae.preprocessing import CLASSES


def pairwise_auc(scores, truth):
    pos = [s for s, t in zip(scores, truth) if t]
    neg = [s for s, t in zip(scores, truth) if not t]
    wins = sum(Fraction(1) if p > n else Fraction(1, 2) if p == n else Fraction(0) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def enumerate_binary(m):
    tp = fp = tn = fn = 0
    for t in range(3):
        for p in range(3):
            n = int(m[t][p])
            if t > 0 and p > 0:
                tp += n
            elif t == 0 and p > 0:
                fp += n
            elif t == 0:
                tn += n
            else:
                fn += n
    return BinaryCounts(tp, fp, tn, fn)


def test_collapse_examples():
    b = collapse_binary(np.diag([10, 5, 3]))
    assert (b.tp, b.tn, b.fp, b.fn) == (8, 10, 0, 0)
    m = np.zeros((3, 3), int)
    m[1, 2] = 1
    assert collapse_binary(m).tp == 1
    g = np.random.default_rng(0)
    for _ in range(50):
        m = g.integers(0, 20, (3, 3))
        b = collapse_binary(m)
        assert b == enumerate_binary(m) and b.total == m.sum()


def test_sens_spec():
    b = BinaryCounts(tp=32, fp=5, tn=95, fn=68)
    assert sensitivity(b) == pytest.approx(0.32) and specificity(b) == pytest.approx(0.95)
    flags = []
    assert math.isnan(sensitivity(BinaryCounts(0, 3, 4, 0), flags)) and flags
    perfect = collapse_binary(np.diag([4, 2, 2]))
    assert sensitivity(perfect) == 1.0 and specificity(perfect) == 1.0


def test_youden_examples():
    assert youden(0.32, 0.95) == pytest.approx(0.27)
    assert youden(1, 1) == 1 and youden(0.5, 0.5) == 0


def test_total_precision():
    assert total_precision(np.diag([3, 4, 5])) == 3.0
    m = np.array([[3, 1, 0], [1, 2, 0], [0, 1, 0]])
    flags = []
    assert total_precision(m, flags) == pytest.approx(3 / 4 + 2 / 4)
    assert any("Extrasystole" in f for f in flags)
    g = np.random.default_rng(1)
    for _ in range(50):
        m = g.integers(1, 15, (3, 3))
        oracle = sum(Fraction(int(m[c, c]), int(m[:, c].sum())) for c in range(3))
        assert total_precision(m) == pytest.approx(float(oracle), abs=1e-15)
        assert 0 <= total_precision(m) <= 3


def test_discriminant_power():
    assert discriminant_power(0.5, 0.5) == 0.0
    assert discriminant_power(0.32, 0.95) == pytest.approx(1.208, abs=5e-4)
    assert discriminant_power(0.3, 0.8) == discriminant_power(0.8, 0.3)
    flags = []
    assert math.isfinite(discriminant_power(1.0, 0.0, flags)) and flags


def test_auc_examples():
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert roc_auc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5
    assert math.isnan(roc_auc([1, 2], [1, 1]))


def test_auc_matches_pairwise_oracle_exactly():
    g = np.random.default_rng(2)
    for _ in range(100):
        n = int(g.integers(2, 40))
        truth = g.random(n) < 0.4
        truth[0], truth[1] = True, False
        scores = g.integers(0, 6, n).astype(float) if g.random() < 0.5 else g.standard_normal(n)
        oracle = pairwise_auc(scores.tolist(), truth.tolist())
        assert Fraction(roc_auc(scores, truth)) == Fraction(float(oracle))


def test_auc_random_predictions_near_half():
    g = np.random.default_rng(3)
    truth = np.array(["Normal", "Murmur"] * 500)  # AUC sd ~ 0.018 at this size
    for _ in range(20):
        pred = g.choice(CLASSES, 1000)
        r = evaluate(truth, pred, g.standard_normal(1000))
        assert abs(r.auc - 0.5) < 0.1


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=4, max_size=30), st.integers(0, 1000))
def test_auc_monotone_invariance(scores, seed):
    g = np.random.default_rng(seed)
    truth = g.random(len(scores)) < 0.5
    truth[0], truth[1] = True, False
    s = np.array(scores)
    uniq = np.unique(s)
    image = np.cumsum(g.uniform(0.1, 5.0, len(uniq))) - 100  # strictly increasing map of the distinct values
    assert roc_auc(s, truth) == roc_auc(image[np.searchsorted(uniq, s)], truth)


def test_table_rows_youden_identity():
    assert REPORT_COLUMNS == ["model", "C", "YI", "TP", "Spec", "Sens", "DP", "AUC"]
    assert len(PUBLISHED_MODEL_ROWS) == 8
    for name, (C, yi, tp, spec, sens, dp, auc) in PUBLISHED_MODEL_ROWS.items():
        assert abs(youden(sens, spec) - yi) <= 0.015, name


def test_evaluate_perfect_and_report():
    truth = ["Normal", "Murmur", "Extrasystole", "Normal"]
    r = evaluate(truth, truth, [0, 1, 2, -1], model="m", C=0.3)
    assert r.yi == 1 and r.tp == 3 and r.auc == 1.0
    assert r.row() == ["m", 0.3, r.yi, 3.0, 1.0, 1.0, r.dp, 1.0]
    assert r.yi == r.sensitivity + r.specificity - 1
    assert confusion_counts(truth, truth).trace() == 4
    avg, std = average_reports([r, r, r])
    for k in ("yi", "tp", "specificity", "sensitivity", "dp", "auc"):
        assert getattr(avg, k) == getattr(r, k) and std[k] == 0
    assert per_class_precision(np.diag([1, 1, 1])) == [1.0, 1.0, 1.0]
