import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import exact_metrics, per_spot_confusion
from parkroi.domain import ConfusionCounts, CountResult, ValidationError
from parkroi.occupancy import (
    EvaluationError,
    LabeledImage,
    confusion_from_counts,
    dataset_filter,
    evaluate_dataset,
    metrics,
    occupancy,
    read_labels_csv,
    write_labels_csv,
)


def cr(n):
    return CountResult(n, n, {"car": n} if n else {})


@pytest.mark.parametrize("in_roi,free", [(8, 8), (0, 16), (20, 0)])
def test_occupancy_free_spaces(in_roi, free):
    rec = occupancy(cr(in_roi), 16, "lot-a", 100.0, "m")
    assert (rec.vehicles, rec.free) == (in_roi, free)


def test_occupancy_zero_capacity():
    with pytest.raises(ValidationError):
        occupancy(cr(1), 0, "lot", 0.0, "m")


@pytest.mark.parametrize(
    "L,P,want",
    [
        (8, 8, ConfusionCounts(tp=8, tn=8, fp=0, fn=0)),
        (10, 7, ConfusionCounts(tp=6, tn=7, fp=3, fn=0)),
        (5, 9, ConfusionCounts(tp=7, tn=5, fp=0, fn=4)),
        (3, 40, ConfusionCounts(tp=0, tn=3, fp=0, fn=13)),
    ],
)
def test_confusion_examples(L, P, want):
    assert confusion_from_counts(L, P, 16) == want


def test_confusion_label_over_capacity():
    with pytest.raises(ValidationError):
        confusion_from_counts(17, 3, 16)


@given(st.integers(1, 8).flatmap(lambda s: st.tuples(st.just(s), st.integers(0, s), st.integers(0, s + 4))))
def test_confusion_matches_per_spot_oracle(args):
    s, lab, pred = args
    c = confusion_from_counts(lab, pred, s)
    assert (c.tp, c.tn, c.fp, c.fn) == per_spot_confusion(lab, pred, s)


@given(st.integers(1, 500).flatmap(lambda s: st.tuples(st.just(s), st.integers(0, s), st.integers(0, 3 * s))))
def test_confusion_sums_to_capacity(args):
    s, lab, pred = args
    assert confusion_from_counts(lab, pred, s).total == s
    diag = confusion_from_counts(lab, lab, s)
    assert diag.fp == diag.fn == 0


@given(st.integers(1, 200).flatmap(lambda s: st.tuples(st.just(s), st.integers(0, s), st.integers(0, s))))
def test_swapping_label_and_prediction(args):
    s, lab, pred = args
    a = confusion_from_counts(lab, pred, s)
    b = confusion_from_counts(pred, lab, s)
    assert (a.fp, a.fn) == (b.fn, b.fp)
    assert a.tp == b.tp == s - max(lab, pred)
    assert metrics(a).accuracy == metrics(b).accuracy


def test_metrics_perfect():
    m = metrics(ConfusionCounts(8, 8, 0, 0))
    assert m.accuracy == m.balanced_accuracy == m.f1 == 1.0
    assert not m.undefined


def test_metrics_substitution_example():
    m = metrics(ConfusionCounts(tp=50, tn=40, fp=5, fn=5))
    assert m.accuracy == pytest.approx(0.90)
    assert m.precision == pytest.approx(50 / 55)
    assert m.recall == pytest.approx(50 / 55)
    assert round(m.f1, 4) == 0.9091
    assert m.specificity == pytest.approx(40 / 45)
    assert round(m.balanced_accuracy, 4) == 0.8990


def test_metrics_degenerate_precision():
    m = metrics(ConfusionCounts(tp=0, tn=10, fp=0, fn=0))
    assert m.precision == 0.0
    assert m.specificity == 1.0
    assert {"precision", "recall", "sensitivity", "f1", "balanced_accuracy"} <= m.undefined
    assert "specificity" not in m.undefined


def test_metrics_all_zero():
    with pytest.raises(EvaluationError):
        metrics(ConfusionCounts())


counts = st.tuples(*[st.integers(0, 10_000)] * 4).filter(lambda t: sum(t) > 0)


@given(counts)
def test_metrics_match_exact_oracle(t):
    m = metrics(ConfusionCounts(*t))
    want = exact_metrics(*t)
    for name, value in want.items():
        assert math.isclose(getattr(m, name), float(value), rel_tol=1e-12, abs_tol=1e-15), name
    assert m.recall == m.sensitivity
    for v in m.to_dict().values():
        if isinstance(v, float):
            assert 0.0 <= v <= 1.0


def test_evaluate_two_perfect_images():
    labels = [LabeledImage("a", 8), LabeledImage("b", 3)]
    ev = evaluate_dataset(labels, {"a": cr(8), "b": cr(3)}, 16)
    assert ev.confusion.tp + ev.confusion.tn == 32
    assert ev.metrics.balanced_accuracy == 1.0


def test_evaluate_aggregates_by_sum():
    labels = [LabeledImage("a", 10), LabeledImage("b", 5)]
    ev = evaluate_dataset(labels, {"a": cr(7), "b": cr(9)}, 16)
    assert ev.confusion == ConfusionCounts(tp=13, tn=12, fp=3, fn=4)
    doc = ev.to_dict()
    assert doc["n_images"] == 2
    assert doc["confusion"]["matrix"] == ev.confusion.as_matrix()
    assert [r["image_id"] for r in doc["per_image"]] == ["a", "b"]


def test_evaluate_errors():
    with pytest.raises(EvaluationError):
        evaluate_dataset([], {}, 16)
    with pytest.raises(EvaluationError, match="b, c"):
        evaluate_dataset([LabeledImage("a", 1), LabeledImage("b", 1), LabeledImage("c", 1)], {"a": cr(1)}, 16)


def test_dataset_filter():
    labels = [LabeledImage(f"i{k}", 0 if k < 22 else 1 + k % 16) for k in range(100)]
    kept, frac = dataset_filter(labels)
    assert len(kept) == 78 and frac == 0.22
    same = [LabeledImage("x", 2)]
    assert dataset_filter(same) == (same, 0.0)
    assert dataset_filter([LabeledImage("x", 0)]) == ([], 1.0)


def test_labels_csv_round_trip():
    labels = [LabeledImage("a.jpg", 3), LabeledImage("b.jpg", 0)]
    assert read_labels_csv(write_labels_csv(labels)) == labels
    with pytest.raises(EvaluationError):
        read_labels_csv("name,count\na,1\n")
    with pytest.raises(EvaluationError, match="line 3"):
        read_labels_csv("image_id,vehicle_count\na,1\nb,x\n")
