import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from threedfr.datasets import SplitManifest, SplitRow, synth_sequence, write_sequence
from threedfr.metrics import (
    Confusion,
    Metrics,
    accumulate,
    evaluate_split,
    evaluate_video,
    fscore,
    ground_truth_predictor,
    write_report,
)


@pytest.fixture(scope="module")
def seq():
    return synth_sequence(width=16, height=16, frame_count=60, object_count=1, object_size=5, seed=9)


def test_four_pixel_case():
    pred = np.array([0.9, 0.9, 0.1, 0.1])
    target = np.array([1, 0, 1, 0])
    conf = accumulate(Confusion(), pred, target, np.ones(4))
    assert conf == Confusion(1, 1, 1, 1)
    assert fscore(conf) == 0.5


def test_ignored_pixels_do_not_count():
    conf = accumulate(Confusion(), np.array([1.0, 1.0]), np.array([0, 1]), np.array([0, 1]))
    assert conf == Confusion(tp=1)


@pytest.mark.parametrize("conf,expected", [
    (Confusion(10, 0, 0, 5), 1.0),
    (Confusion(0, 3, 4, 9), 0.0),
    (Confusion(3, 1, 2, 0), 6 / 9),
    (Confusion(50, 25, 25, 100), 0.6666666666666666),
    (Confusion(0, 0, 0, 100), None),
])
def test_fscore_arithmetic(conf, expected):
    assert fscore(conf) == expected


def test_threshold_boundary():
    assert accumulate(Confusion(), np.array([0.5]), np.array([1]), np.array([1])).tp == 1
    assert accumulate(Confusion(), np.array([0.4999]), np.array([1]), np.array([1])).fn == 1


def test_oracle_and_constant_predictors(seq):
    _, f = evaluate_video(seq, ground_truth_predictor)
    assert f == 1.0
    conf, f0 = evaluate_video(seq, lambda w: np.zeros_like(w.target))
    assert f0 == 0.0 and conf.tp == conf.fp == 0 and conf.fn > 0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_threshold_monotonicity(seed):
    rng = np.random.default_rng(seed)
    prob, target, mask = rng.random(200), rng.random(200) < 0.3, rng.random(200) < 0.9
    positives = [
        (lambda c: c.tp + c.fp)(accumulate(Confusion(), prob, target, mask, t))
        for t in np.linspace(0, 1, 21)
    ]
    assert all(a >= b for a, b in zip(positives, positives[1:]))
    tps = [accumulate(Confusion(), prob, target, mask, t).tp for t in np.linspace(0, 1, 21)]
    assert all(a >= b for a, b in zip(tps, tps[1:]))


def test_order_independence(rng):
    items = [(rng.random(30), rng.random(30) < 0.5, rng.random(30) < 0.8) for _ in range(6)]
    a, b = Confusion(), Confusion()
    for p, t, m in items:
        accumulate(a, p, t, m)
    for p, t, m in reversed(items):
        accumulate(b, p, t, m)
    assert a == b


def test_metrics_aggregation():
    m = Metrics({("c1", "a"): Confusion(1, 1, 0, 0), ("c1", "b"): Confusion(0, 0, 0, 9),
                 ("c2", "x"): Confusion(3, 0, 1, 0)})
    assert m.video_scores() == {("c1", "a"): 2 / 3, ("c1", "b"): None, ("c2", "x"): 6 / 7}
    assert m.category_scores() == {"c1": 2 / 3, "c2": 6 / 7}
    assert m.overall == pytest.approx((2 / 3 + 6 / 7) / 2)
    assert Metrics().overall is None


def test_report_rows(tmp_path):
    m = Metrics({("c1", "a"): Confusion(1, 1, 0, 0), ("c1", "b"): Confusion(0, 0, 0, 9),
                 ("c2", "x"): Confusion(3, 0, 1, 0)})
    write_report(m, tmp_path / "r.csv")
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert rows[0] == ["scope", "name", "tp", "fp", "fn", "tn", "fscore"]
    assert rows[1] == ["video", "c1/a", "1", "1", "0", "0", "0.6667"]
    assert rows[2][-1] == "undefined"
    assert [r[0] for r in rows[1:]] == ["video"] * 3 + ["category"] * 2 + ["overall"]
    assert rows[-1] == ["overall", "overall", "4", "1", "1", "9", "0.7619"]


def test_evaluate_split_oracle(tmp_path, seq):
    write_sequence(seq, tmp_path, "synthetic")
    other = synth_sequence(width=16, height=16, frame_count=60, object_count=1, object_size=5, seed=10)
    write_sequence(other, tmp_path, "synthetic")
    manifest = SplitManifest([SplitRow("synthetic", other.name, "train"), SplitRow("synthetic", seq.name, "test")])
    metrics = evaluate_split(manifest.validate(), tmp_path, ground_truth_predictor, step=3)
    assert list(metrics.videos) == [("synthetic", seq.name)]
    assert metrics.overall == 1.0
