import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st

from damage25d.errors import ValidationError
from damage25d.evaluation import (
    ToleranceCounts,
    ap50,
    average_precision,
    crosscheck_greedy,
    evaluation_report,
    format_report,
    instance_iou,
    iou_tol,
    optimal_tp_count,
    resample_vertices,
    tolerance_counts,
    tolerance_label,
)
from damage25d.records import InstanceRecord


def line_rec(i, xs, cls="crack", conf=1.0, y=0.0):
    pts = np.c_[np.asarray(xs, float), np.full(len(xs), y), np.zeros(len(xs))]
    return InstanceRecord(i, cls, "medial_axis", [pts], conf)


# -- resampling --------------------------------------------------------------

def test_resample_unit_segment():
    out = resample_vertices([[0, 0, 0], [1, 0, 0]], 0.25)
    np.testing.assert_allclose(out[:, 0], [0, 0.25, 0.5, 0.75, 1.0], atol=1e-15)


def test_resample_closed_square():
    sq = [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]]
    out = resample_vertices(sq, 0.5, closed=True)
    assert len(out) == 8
    np.testing.assert_array_equal(out[0], [0, 0, 0])


@given(st.integers(0, 10_000), st.floats(0.01, 0.5))
def test_resample_preserves_length(seed, spacing):
    pts = np.cumsum(np.random.default_rng(seed).normal(size=(8, 3)), axis=0)
    out = resample_vertices(pts, spacing)
    L0 = np.linalg.norm(np.diff(pts, axis=0), axis=1).sum()
    L1 = np.linalg.norm(np.diff(out, axis=0), axis=1).sum()
    assert L1 <= L0 + 1e-9 and L0 - L1 <= spacing
    np.testing.assert_array_equal(out[[0, -1]], pts[[0, -1]])
    assert np.linalg.norm(np.diff(out, axis=0), axis=1).max() <= spacing + 1e-9


def test_resample_rejects_bad_spacing():
    with pytest.raises(ValidationError):
        resample_vertices([[0, 0, 0], [1, 0, 0]], 0.0)


# -- tolerance counts --------------------------------------------------------

def test_identical_sets(rng):
    v = rng.random((30, 3))
    c = tolerance_counts(v, v, 0.001)
    assert (c.tp, c.fn, c.fp) == (30, 0, 0) and iou_tol(c) == 1.0


def test_hand_computed_threshold_example():
    T = [[0, 0, 0]]
    P = [[0, 0, 0.03]]
    c = tolerance_counts(T, P, 0.04)
    assert (c.tp, c.fn, c.fp) == (1, 0, 0)
    c = tolerance_counts(T, P, 0.02)
    assert (c.tp, c.fn, c.fp) == (0, 1, 1)


def test_disjoint_sets(rng):
    c = tolerance_counts(rng.random((5, 3)), rng.random((7, 3)) + 10, 0.5)
    assert (c.tp, c.fn, c.fp) == (0, 5, 7) and iou_tol(c) == 0.0


def test_empty_sets():
    e = np.zeros((0, 3))
    c = tolerance_counts(e, [[1, 2, 3]], 0.1)
    assert (c.tp, c.fn, c.fp) == (0, 0, 1)
    c = tolerance_counts([[1, 2, 3]], e, 0.1)
    assert (c.tp, c.fn, c.fp) == (0, 1, 0)
    assert iou_tol(tolerance_counts(e, e, 0.1)) == 1.0
    with pytest.raises(ValidationError):
        tolerance_counts(e, e, 0.0)


def test_iou_arithmetic():
    assert iou_tol(ToleranceCounts(9, 0, 1, 0.1)) == 0.9
    assert iou_tol(ToleranceCounts(0, 3, 4, 0.1)) == 0.0


def test_iou_non_decreasing_in_tau():
    r = np.random.default_rng(2024)
    for _ in range(1000):
        t = r.random((int(r.integers(0, 30)), 3))
        p = r.random((int(r.integers(0, 30)), 3))
        taus = np.sort(r.uniform(1e-3, 1.0, 4))
        vals = [iou_tol(tolerance_counts(t, p, tau)) for tau in taus]
        assert all(b >= a for a, b in zip(vals, vals[1:]))


@given(st.integers(0, 10_000), st.floats(0.01, 1.0))
def test_swap_symmetry(seed, tau):
    r = np.random.default_rng(seed)
    a = r.random((int(r.integers(0, 20)), 3))
    b = r.random((int(r.integers(0, 20)), 3))
    ab = tolerance_counts(a, b, tau)
    ba = tolerance_counts(b, a, tau)
    assert ab.fn == ba.fp and ab.fp == ba.fn
    assert ab.tp + ab.fn == len(a)


# -- AP ----------------------------------------------------------------------

def reference_ap(tp_flags, n_truth):
    """Sum over true positives of the best precision at equal or higher recall."""
    tp_flags = np.asarray(tp_flags, float)
    ctp = np.cumsum(tp_flags)
    prec = ctp / np.arange(1, len(tp_flags) + 1)
    total = 0.0
    for k in np.nonzero(tp_flags)[0]:
        total += prec[k:].max() / n_truth
    return total


def test_ap_single_perfect():
    t = line_rec(0, [0, 0.1])
    assert ap50([t], [t], 0.04).ap == 1.0


def test_ap_two_truths_one_prediction():
    t1, t2 = line_rec(0, [0, 0.1]), line_rec(1, [5, 5.1])
    res = ap50([t1, t2], [line_rec(0, [0, 0.1])], 0.04)
    assert abs(res.ap - 0.5) <= 1e-12
    assert res.precision.tolist() == [1.0] and res.recall.tolist() == [0.5]


def test_ap_higher_confidence_wins_match():
    xs = np.arange(10.0)
    truth = line_rec(0, xs)
    a = line_rec(0, xs[:6], conf=0.9)  # IoU 0.6
    b = line_rec(1, xs[:9], conf=0.5)  # IoU 0.9
    assert instance_iou(truth, a, 0.04, None) == pytest.approx(0.6)
    assert instance_iou(truth, b, 0.04, None) == pytest.approx(0.9)
    res = ap50([truth], [a, b], 0.04, spacing=None)
    assert res.matches == [(0, 0, pytest.approx(0.6))]
    assert abs(res.ap - 1.0) <= 1e-12


def test_ap_pr_integral_by_hand():
    # TP, FP, TP against two truths: 0.5 * 1 + 0.5 * 2/3
    assert abs(average_precision([1, 0.5, 2 / 3], [0.5, 0.5, 1.0]) - 5 / 6) <= 1e-12
    assert abs(reference_ap([1, 0, 1], 2) - 5 / 6) <= 1e-12
    # FP then TP: interpolated precision 1/2 over the whole recall range
    assert abs(average_precision([0, 0.5], [0, 1.0]) - 0.5) <= 1e-12


@given(st.lists(st.booleans(), min_size=1, max_size=30), st.integers(0, 10))
def test_ap_matches_reference(flags, extra_truth):
    n_truth = sum(flags) + extra_truth
    if n_truth == 0:
        return
    ctp = np.cumsum(flags)
    prec = ctp / np.arange(1, len(flags) + 1)
    rec = ctp / n_truth
    assert abs(average_precision(prec, rec) - reference_ap(flags, n_truth)) <= 1e-12


def _scene(r, n_truth, n_pred):
    truth = [line_rec(i, np.arange(6.0) * 0.01 + i, y=0) for i in range(n_truth)]
    preds = []
    for i in range(n_pred):
        base = int(r.integers(0, max(n_truth, 1)))
        keep = int(r.integers(2, 7))
        preds.append(line_rec(i, np.arange(keep) * 0.01 + base + r.normal(0, 0.02), conf=float(r.random())))
    return truth, preds


@given(st.integers(0, 10_000), st.floats(0.01, 100))
def test_ap_invariant_to_confidence_scaling(seed, s):
    r = np.random.default_rng(seed)
    truth, preds = _scene(r, 4, 5)
    conf = np.array([p.confidence for p in preds])
    a = ap50(truth, preds, 0.02, spacing=None, confidences=conf)
    b = ap50(truth, preds, 0.02, spacing=None, confidences=conf * s)
    assert a.ap == b.ap and a.matches == b.matches


def test_ap_no_truth_convention():
    assert ap50([], [], 0.04).ap == 1.0
    assert ap50([], [line_rec(0, [0, 1])], 0.04).ap == 0.0


def test_ap_ignores_other_classes():
    t = line_rec(0, [0, 0.1])
    p = line_rec(0, [0, 0.1], cls="spalling")
    assert ap50([t], [p], 0.04).ap == 0.0


def test_crosscheck_reports_discrepancy(caplog):
    xs = np.arange(10.0)
    t1 = line_rec(0, xs[:6])
    t2 = line_rec(1, xs[:5])
    a = line_rec(0, xs[:6], conf=0.9)  # t1: 1.0
    b = line_rec(1, xs[:3], conf=0.5)  # t2: 0.6
    with caplog.at_level(logging.WARNING):
        assert crosscheck_greedy([t1, t2], [a, b], 0.04, spacing=None) == (2, 2)
    assert not caplog.records
    # a prefers t2 (IoU 1) over t1 (0.5); b then only reaches t1 at 0.4
    t1 = line_rec(0, np.r_[xs[:5], xs[5:] + 100])  # a: 5/10 = 0.5
    t2 = line_rec(1, xs[:5])
    a = line_rec(0, xs[:5], conf=0.9)
    b = line_rec(1, xs[:4], conf=0.5)
    assert instance_iou(t1, a, 0.04, None) == pytest.approx(0.5)
    with caplog.at_level(logging.WARNING):
        assert crosscheck_greedy([t1, t2], [a, b], 0.04, spacing=None) == (1, 2)
    assert "greedy" in caplog.text


def test_optimal_limited_to_six():
    recs = [line_rec(i, [i, i + 0.5]) for i in range(7)]
    with pytest.raises(ValidationError):
        optimal_tp_count(recs, recs[:1], 0.04)


# -- report ------------------------------------------------------------------

def test_tolerance_labels():
    assert [tolerance_label(t) for t in (0.01, 0.02, 0.04, 0.06, 0.08)] == \
        ["1.0 cm", "2.0 cm", "4.0 cm", "6.0 cm", "8.0 cm"]


def test_report_self_evaluation():
    truth = [line_rec(0, [0, 0.3]), line_rec(1, [1, 1.2], cls="corrosion")]
    truth[1] = InstanceRecord(1, "corrosion", "polygon", [[[1, 0, 0], [1.2, 0, 0], [1.2, 0.2, 0]]])
    rep = evaluation_report(truth, truth, classes=["crack", "corrosion"])
    assert [r["label"] for r in rep["rows"]] == ["1.0 cm", "2.0 cm", "4.0 cm", "6.0 cm", "8.0 cm"]
    for row in rep["rows"]:
        for c in row["classes"].values():
            assert c["iou"] == 1.0 and c["ap50"] == 1.0
    text = format_report(rep)
    assert text.splitlines()[0].split()[0] == "Tol."
    assert "4.0 cm" in text
