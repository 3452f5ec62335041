import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mksnet.metrics import (APResult, ap_from_scores, average_precision,
                            mean_ap, pr_curve)
from mksnet.rng import Stream


def oracle_ap(scores, labels, total_positives):
    """Threshold-enumeration reference: walk the ranked list, sum
    precision-envelope area in recall. Independent of the library's vector
    implementation."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    tp = fp = 0
    points = []
    for i in order:
        if labels[i]:
            tp += 1
        else:
            fp += 1
        points.append((tp / total_positives, tp / (tp + fp)))
    # monotone envelope from the right
    env = [0.0] * len(points)
    best = 0.0
    for j in range(len(points) - 1, -1, -1):
        best = max(best, points[j][1])
        env[j] = best
    area = 0.0
    prev_r = 0.0
    for (r, _), e in zip(points, env):
        area += (r - prev_r) * e
        prev_r = r
    return area


class TestHandExamples:
    def test_textbook_six_predictions(self):
        # ranked labels 1,0,1,1,0,0 with 3 positives
        scores = [0.9, 0.8, 0.7, 0.6, 0.5, 0.4]
        labels = [1, 0, 1, 1, 0, 0]
        # envelope: p=1 at r=1/3; then max(2/3, 3/4)=3/4 for the rest
        expected = (1 / 3) * 1.0 + (2 / 3) * (3 / 4)
        assert abs(ap_from_scores(scores, labels) - expected) < 1e-12
        assert abs(expected - 0.8333333333333333) < 1e-12

    def test_perfect_ranking_is_one(self):
        assert ap_from_scores([3, 2, 1], [1, 1, 0]) == 1.0

    def test_worst_ranking(self):
        # single positive ranked last of n
        n = 10
        scores = list(range(n, 0, -1))
        labels = [0] * (n - 1) + [1]
        assert abs(ap_from_scores(scores, labels) - 1 / n) < 1e-12

    def test_missed_positives_cap_recall(self):
        # 1 detected of 2 positives: area stops at recall 0.5
        ap = ap_from_scores([0.9], [1], total_positives=2)
        assert abs(ap - 0.5) < 1e-12


class TestCurveProperties:
    def test_recall_non_decreasing_precision_envelope_non_increasing(self):
        s = Stream(5, "pr")
        scores = s.uniform((200,), 0, 1)
        labels = (s.uniform((200,), 0, 1) > 0.7).astype(int)
        pts = pr_curve(scores, labels, int(labels.sum()))
        rec = [p.recall for p in pts]
        assert rec == sorted(rec)
        prec = np.array([p.precision for p in pts])
        env = np.maximum.accumulate(prec[::-1])[::-1]
        assert np.all(np.diff(env) <= 1e-15)

    def test_tie_order_is_stable(self):
        # equal scores: curve follows input order
        pts = pr_curve([0.5, 0.5, 0.5], [1, 0, 1], 2)
        assert [round(p.precision, 6) for p in pts] == [1.0, 0.5, round(2 / 3, 6)]

    def test_validation_errors(self):
        with pytest.raises(ValueError, match="finite"):
            pr_curve([np.nan, 0.1], [1, 0], 1)
        with pytest.raises(ValueError, match="positives"):
            pr_curve([0.5], [0], 0)
        with pytest.raises(ValueError, match="1-D"):
            pr_curve([[0.5]], [[1]], 1)
        with pytest.raises(ValueError, match="empty"):
            average_precision([])
        with pytest.raises(ValueError, match="empty"):
            mean_ap([])


class TestAgainstOracle:
    def test_thousand_random_problems(self):
        s = Stream(123, "ap-oracle")
        for trial in range(1000):
            n = int(s.integers((), 2, 40))
            scores = s.uniform((n,), 0, 1)
            if trial % 3 == 0:  # force ties sometimes
                scores = np.round(scores * 4) / 4
            labels = (s.uniform((n,), 0, 1) < 0.4).astype(int)
            if labels.sum() == 0:
                labels[int(s.integers((), 0, n - 1))] = 1
            extra = int(s.integers((), 0, 2))  # sometimes undetected positives
            total = int(labels.sum()) + extra
            got = ap_from_scores(scores, labels, total_positives=total)
            want = oracle_ap(list(scores), list(labels), total)
            assert abs(got - want) <= 1e-12, (trial, got, want)

    def test_monotone_transform_invariance(self):
        s = Stream(7, "mono")
        scores = s.uniform((100,), -3, 3)
        labels = (s.uniform((100,), 0, 1) < 0.3).astype(int)
        labels[0] = 1
        base = ap_from_scores(scores, labels)
        for f in (lambda x: 2 * x + 5, np.tanh, lambda x: np.exp(x / 2)):
            assert abs(ap_from_scores(f(scores), labels) - base) < 1e-12


@given(st.lists(st.tuples(st.floats(-1e6, 1e6), st.booleans()),
                min_size=1, max_size=60).filter(lambda v: any(l for _, l in v)))
@settings(max_examples=60, deadline=None)
def test_hypothesis_matches_oracle_and_bounds(pairs):
    scores = [p[0] for p in pairs]
    labels = [int(p[1]) for p in pairs]
    total = sum(labels)
    ap = ap_from_scores(scores, labels, total_positives=total)
    assert 0.0 <= ap <= 1.0
    assert abs(ap - oracle_ap(scores, labels, total)) <= 1e-12


def test_mean_ap():
    rs = [APResult(0.2, 0), APResult(0.4, 1), APResult(0.9, 2)]
    assert abs(mean_ap(rs) - 0.5) < 1e-15
