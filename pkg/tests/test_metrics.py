import itertools
import json

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from gansweep.data import HEALTHY, REAL, TUMOR, ImageRecord
from gansweep.errors import ConfigurationError, ContractError
from gansweep.metrics import (
    ConfusionCounts,
    MetricsReport,
    ScoredSample,
    auc,
    confusion,
    evaluate,
    f1_score,
    roc_points,
    summary_metrics,
)
from reference_rows import REFERENCE_ROWS


def tally(pred, true):
    c1 = c2 = i1 = i2 = 0
    for p, t in zip(pred, true):
        if p and t:
            c1 += 1
        elif not p and not t:
            c2 += 1
        elif p:
            i1 += 1
        else:
            i2 += 1
    return c1, c2, i1, i2


def pairwise_auc(scores, truths, half=False):
    pos = [s for s, t in zip(scores, truths) if t]
    neg = [s for s, t in zip(scores, truths) if not t]
    total = 0.0
    for a, b in itertools.product(pos, neg):
        total += 1.0 if a > b else (0.5 if half and a == b else 0.0)
    return total / (len(pos) * len(neg))


# -- confusion ------------------------------------------------------------------


def test_confusion_examples():
    truth = [1] * 10 + [0] * 10
    assert confusion(truth, truth) == ConfusionCounts(10, 10, 0, 0)
    assert confusion([1] * 10, [1] * 5 + [0] * 5) == ConfusionCounts(C1=5, C2=0, I1=5, I2=0)


def test_confusion_accepts_label_strings():
    pred = [TUMOR, TUMOR, HEALTHY, HEALTHY]
    true = [TUMOR, HEALTHY, TUMOR, HEALTHY]
    counts = confusion(pred, true)
    assert counts == ConfusionCounts(1, 1, 1, 1)
    np.testing.assert_array_equal(counts.as_matrix(), [[1, 1], [1, 1]])


def test_confusion_matches_tally_loop(rng):
    pred, true = rng.integers(0, 2, 100), rng.integers(0, 2, 100)
    c = confusion(pred, true)
    assert (c.C1, c.C2, c.I1, c.I2) == tally(pred, true)
    assert c.total == 100


def test_confusion_contract():
    with pytest.raises(ContractError):
        confusion([1, 0], [1])
    with pytest.raises(ContractError):
        confusion([], [])


# -- summary metrics --------------------------------------------------------------


def test_summary_metrics_example():
    m = summary_metrics(ConfusionCounts(C1=50, C2=40, I1=10, I2=0))
    assert m.accuracy == pytest.approx(0.90)
    assert m.precision == pytest.approx(50 / 60)
    assert m.recall == 1.0
    assert m.f1 == pytest.approx(0.9091, abs=1e-4)
    assert m.undefined == ()


def test_zero_denominators_flagged():
    m = summary_metrics(ConfusionCounts(C1=0, C2=10, I1=0, I2=0))
    assert (m.precision, m.recall, m.f1) == (0.0, 0.0, 0.0)
    assert set(m.undefined) == {"precision", "recall", "f1"}
    assert m.accuracy == 1.0
    with pytest.raises(ContractError):
        summary_metrics(ConfusionCounts(0, 0, 0, 0))


@pytest.mark.parametrize("row", REFERENCE_ROWS, ids=lambda r: f"gan{r[0]}")
def test_reference_f1_is_consistent(row):
    _, _, precision, recall, f1, _ = row
    assert abs(100 * f1_score(precision / 100, recall / 100) - f1) < 0.05


@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=60))
def test_summary_metrics_match_brute_force(pairs):
    pred, true = zip(*pairs)
    c1, c2, i1, i2 = tally(pred, true)
    m = summary_metrics(confusion(pred, true))
    assert m.accuracy == (c1 + c2) / len(pairs)
    assert m.precision == (c1 / (c1 + i1) if c1 + i1 else 0.0)
    assert m.recall == (c1 / (c1 + i2) if c1 + i2 else 0.0)
    assert 0 <= m.f1 <= 1


# -- AUC ------------------------------------------------------------------------


def samples(pos, neg):
    return [ScoredSample(s, True) for s in pos] + [ScoredSample(s, False) for s in neg]


def test_auc_examples():
    assert auc(samples([0.9, 0.8], [0.2, 0.1])) == 1.0
    assert auc(samples([0.1], [0.9])) == 0.0
    assert auc(samples([0.9, 0.3], [0.4, 0.1])) == 0.75


def test_auc_tie_rules():
    tied = samples([0.5, 0.5], [0.5])
    assert auc(tied) == 0.0
    assert auc(tied, tie_rule="half") == 0.5
    with pytest.raises(ConfigurationError):
        auc(tied, tie_rule="average")


def test_auc_needs_both_classes():
    with pytest.raises(ContractError):
        auc(samples([0.4, 0.6], []))
    with pytest.raises(ContractError):
        auc(samples([], [0.3]))
    with pytest.raises(ContractError):
        auc([0.1, np.nan], [1, 0])


def test_auc_matches_pairwise_enumeration(rng):
    for _ in range(50):
        n = int(rng.integers(2, 40))
        scores = np.round(rng.uniform(0, 1, n), 1)  # coarse grid forces ties
        truths = rng.integers(0, 2, n)
        if truths.all() or not truths.any():
            continue
        assert auc(scores, truths) == pytest.approx(pairwise_auc(scores, truths), abs=1e-12)
        assert auc(scores, truths, tie_rule="half") == pytest.approx(pairwise_auc(scores, truths, half=True), abs=1e-12)


# scores on a 0.01 grid so the transforms below stay strictly increasing in float arithmetic
scored = st.lists(st.tuples(st.integers(-10**5, 10**5).map(lambda i: i / 100), st.booleans()), min_size=2, max_size=40)


@given(scored)
def test_auc_rank_invariance(pairs):
    scores, truths = map(np.array, zip(*pairs))
    assume(truths.any() and not truths.all())
    base = auc(scores, truths)
    # strictly increasing transforms
    assert auc(np.arctan(scores / 100) * 7 + 3, truths) == base
    assert auc(scores * 2.5 - 1, truths) == base


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=40, unique=True), st.data())
def test_auc_complement_without_ties(scores, data):
    truths = np.array(data.draw(st.lists(st.booleans(), min_size=len(scores), max_size=len(scores))))
    assume(truths.any() and not truths.all())
    assert auc(scores, ~truths) == pytest.approx(1 - auc(scores, truths), abs=1e-12)


def test_roc_points_are_monotone(rng):
    scores, truths = rng.uniform(0, 1, 30), np.array([1, 0] * 15)
    pts = roc_points(scores, truths)
    assert pts[0] == (0.0, 0.0) and pts[-1] == (1.0, 1.0)
    assert all(a[0] <= b[0] and a[1] <= b[1] for a, b in zip(pts, pts[1:]))


# -- evaluate -------------------------------------------------------------------


def balanced(n_per_class=50):
    pix = np.zeros((3, 64, 64), np.float32)
    return [ImageRecord(pix + (1 if i % 2 == 0 else -1) * 0.5, TUMOR if i % 2 == 0 else HEALTHY, REAL, f"r{i}") for i in range(2 * n_per_class)]


def test_evaluate_oracle_network():
    report = evaluate(lambda x: (x.mean(axis=(1, 2, 3)) > 0).astype(float), balanced())
    assert report.accuracy == 1.0 and report.auc == 1.0 and report.f1 == 1.0
    assert report.counts == ConfusionCounts(50, 50, 0, 0)


def test_evaluate_constant_network():
    const = lambda x: np.full(len(x), 0.5)
    strict = evaluate(const, balanced())
    assert strict.auc == 0.0 and strict.accuracy == 0.5 and strict.recall == 0.0
    assert "precision" in strict.undefined
    assert evaluate(const, balanced(), tie_rule="half").auc == 0.5


def test_evaluate_composes_component_ops(rng):
    records = balanced(20)
    table = rng.uniform(0, 1, len(records))
    report = evaluate(lambda x: table, records, threshold=0.4)
    truths = [r.label for r in records]
    expected_counts = confusion(table > 0.4, truths)
    summary = summary_metrics(expected_counts)
    assert report.counts == expected_counts
    assert (report.accuracy, report.precision, report.recall, report.f1) == (
        summary.accuracy,
        summary.precision,
        summary.recall,
        summary.f1,
    )
    assert report.auc == auc(table, truths)


def test_evaluate_contract():
    with pytest.raises(ContractError):
        evaluate(lambda x: np.ones(len(x)), [])
    single = [r for r in balanced(5) if r.label == TUMOR]
    with pytest.raises(ContractError):
        evaluate(lambda x: np.ones(len(x)), single)
    with pytest.raises(ContractError):
        evaluate(lambda x: np.ones(3), balanced(5))


def test_report_round_trip(tmp_path):
    report = evaluate(lambda x: np.linspace(0, 1, len(x)), balanced(10))
    path = report.write_json(tmp_path / "m.json")
    assert MetricsReport.from_dict(json.loads(path.read_text())) == report
    lines = report.write_csv(tmp_path / "m.csv").read_text().splitlines()
    assert lines[0].split(",")[:5] == ["accuracy", "precision", "recall", "f1", "auc"] and len(lines) == 2
