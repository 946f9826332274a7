"""Tolerance-based vertex metrics and instance-level average precision.

A true vertex counts as detected when some predicted vertex lies within the
positional tolerance ``tau``; a predicted vertex is a false positive when no
true vertex lies within ``tau``.  IoU(tau) = TP / (TP + FN + FP).  AP50(tau)
treats a predicted instance as correct when its IoU(tau) with an unmatched
true instance of the same class reaches 0.5.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import ValidationError
from .records import InstanceRecord

log = logging.getLogger(__name__)

DEFAULT_SPACING = 0.005
TOLERANCE_GRID = (0.01, 0.02, 0.04, 0.06, 0.08)


@dataclass(frozen=True)
class ToleranceCounts:
    tp: int
    fn: int
    fp: int
    tau: float

    @property
    def iou(self) -> float:
        return iou_tol(self)


@dataclass
class ApResult:
    ap: float
    tau: float
    matches: list = field(default_factory=list)  # (prediction index, truth index, iou)
    ious: list = field(default_factory=list)  # best IoU per prediction, in confidence order
    precision: np.ndarray = None
    recall: np.ndarray = None


@dataclass
class AnnotationSet:
    instances: list

    def __post_init__(self):
        for inst in self.instances:
            if not isinstance(inst, InstanceRecord):
                raise ValidationError("annotation instances must be InstanceRecord objects")

    def __len__(self):
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)


def resample_vertices(geometry, spacing: float, closed: bool = False) -> np.ndarray:
    """Evenly respaced vertices along a polyline or closed loop.

    Every segment is cut into the smallest number of equal pieces not longer
    than ``spacing``, so corners and the total length are kept exactly.  Open
    polylines keep both endpoints; closed loops keep their first vertex and
    do not repeat it at the end.
    """
    if not spacing > 0:
        raise ValidationError("spacing must be positive")
    pts = np.asarray(geometry, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        return pts.copy()
    if closed:
        pts = np.vstack([pts, pts[:1]])
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    keep = seg > 0
    if not keep.any():
        return pts[:1].copy()
    a, b, seg = pts[:-1][keep], pts[1:][keep], seg[keep]
    n = np.maximum(1, np.ceil(seg / spacing - 1e-9).astype(np.int64))
    # fractions 0, 1/n, ..., (n-1)/n per segment; the final endpoint is appended below
    idx = np.repeat(np.arange(len(n)), n)
    frac = (np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n)) / n[idx]
    out = a[idx] + frac[:, None] * (b - a)[idx]
    if not closed:
        out = np.vstack([out, b[-1:]])
    return out


def record_vertices(record: InstanceRecord, spacing: Optional[float] = DEFAULT_SPACING) -> np.ndarray:
    """All vertices of an instance, resampled per part unless ``spacing`` is None."""
    if spacing is None:
        return record.vertices()
    return np.concatenate([resample_vertices(p, spacing, record.closed) for p in record.parts], axis=0)


def tolerance_counts(truth_vertices, pred_vertices, tau: float) -> ToleranceCounts:
    if not tau > 0:
        raise ValidationError("tolerance must be positive")
    t = np.asarray(truth_vertices, dtype=np.float64).reshape(-1, 3)
    p = np.asarray(pred_vertices, dtype=np.float64).reshape(-1, 3)
    if len(t) == 0:
        return ToleranceCounts(0, 0, len(p), tau)
    if len(p) == 0:
        return ToleranceCounts(0, len(t), 0, tau)
    dt, _ = cKDTree(p).query(t, k=1)
    dp, _ = cKDTree(t).query(p, k=1)
    tp = int(np.count_nonzero(dt <= tau))
    return ToleranceCounts(tp, len(t) - tp, int(np.count_nonzero(dp > tau)), tau)


def iou_tol(counts: ToleranceCounts) -> float:
    """TP / (TP + FN + FP); two empty vertex sets agree perfectly (1.0)."""
    denom = counts.tp + counts.fn + counts.fp
    if denom == 0:
        return 1.0
    return counts.tp / denom


def instance_iou(truth: InstanceRecord, pred: InstanceRecord, tau: float,
                 spacing: Optional[float] = DEFAULT_SPACING) -> float:
    return iou_tol(tolerance_counts(record_vertices(truth, spacing), record_vertices(pred, spacing), tau))


def average_precision(precision, recall) -> float:
    """All-point interpolated area under the precision-recall curve."""
    mrec = np.concatenate([[0.0], np.asarray(recall, dtype=np.float64), [1.0]])
    mpre = np.concatenate([[0.0], np.asarray(precision, dtype=np.float64), [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def _iou_matrix(truth, preds, tau, spacing):
    tv = [record_vertices(t, spacing) for t in truth]
    pv = [record_vertices(p, spacing) for p in preds]
    m = np.zeros((len(preds), len(truth)))
    for i, p in enumerate(preds):
        for j, t in enumerate(truth):
            if p.class_name == t.class_name:
                m[i, j] = iou_tol(tolerance_counts(tv[j], pv[i], tau))
            else:
                m[i, j] = -1.0
    return m


def ap50(truth, predictions: Sequence[InstanceRecord], tau: float, iou_threshold: float = 0.5,
         spacing: Optional[float] = DEFAULT_SPACING, confidences: Optional[Sequence[float]] = None) -> ApResult:
    """Greedy confidence-ordered matching and all-point AP.

    ``confidences`` overrides the records' own confidence values.  With no
    true instances AP is 1.0 when there are also no predictions, else 0.0.
    """
    if not tau > 0:
        raise ValidationError("tolerance must be positive")
    truth = list(truth)
    preds = list(predictions)
    conf = np.asarray([p.confidence for p in preds] if confidences is None else confidences, dtype=np.float64)
    order = np.argsort(-conf, kind="stable")
    if not truth:
        return ApResult(1.0 if not preds else 0.0, tau, precision=np.zeros(0), recall=np.zeros(0))
    ious = _iou_matrix(truth, [preds[i] for i in order], tau, spacing)
    matched = np.zeros(len(truth), dtype=bool)
    tp = np.zeros(len(preds))
    matches, best_ious = [], []
    for rank, pi in enumerate(order):
        row = np.where(matched, -1.0, ious[rank])
        j = int(np.argmax(row)) if len(row) else -1
        best = float(row[j]) if j >= 0 else -1.0
        best_ious.append(max(best, 0.0))
        if best >= iou_threshold:
            matched[j] = True
            tp[rank] = 1
            matches.append((int(pi), j, best))
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, len(preds) + 1) if len(preds) else np.zeros(0)
    recall = ctp / len(truth)
    return ApResult(average_precision(precision, recall), tau, matches, best_ious, precision, recall)


def optimal_tp_count(truth, predictions, tau, iou_threshold=0.5, spacing=DEFAULT_SPACING) -> int:
    """Maximum number of true positives over all one-to-one assignments (small inputs only)."""
    truth, preds = list(truth), list(predictions)
    if len(truth) > 6 or len(preds) > 6:
        raise ValidationError("exhaustive assignment limited to 6 instances per side")
    ok = _iou_matrix(truth, preds, tau, spacing) >= iou_threshold
    best = 0
    slots = list(range(len(truth))) + [None] * len(preds)
    for perm in itertools.permutations(slots, len(preds)):
        best = max(best, sum(1 for i, j in enumerate(perm) if j is not None and ok[i, j]))
    return best


def crosscheck_greedy(truth, predictions, tau, iou_threshold=0.5, spacing=DEFAULT_SPACING) -> tuple:
    """``(greedy TP, optimal TP)``; logs a warning when they differ."""
    greedy = len(ap50(truth, predictions, tau, iou_threshold, spacing).matches)
    optimal = optimal_tp_count(truth, predictions, tau, iou_threshold, spacing)
    if greedy != optimal:
        log.warning("greedy matching found %d TPs, optimal assignment %d (tau=%g)", greedy, optimal, tau)
    return greedy, optimal


def class_iou(truth, predictions, class_name: str, tau: float, spacing: Optional[float] = DEFAULT_SPACING) -> ToleranceCounts:
    """Scene-level counts over all vertices of one class."""
    tv = [record_vertices(r, spacing) for r in truth if r.class_name == class_name]
    pv = [record_vertices(r, spacing) for r in predictions if r.class_name == class_name]
    t = np.concatenate(tv) if tv else np.zeros((0, 3))
    p = np.concatenate(pv) if pv else np.zeros((0, 3))
    return tolerance_counts(t, p, tau)


def tolerance_label(tau: float) -> str:
    return f"{tau * 100:.1f} cm"


def evaluation_report(truth, predictions, taus: Sequence[float] = TOLERANCE_GRID,
                      spacing: Optional[float] = DEFAULT_SPACING, classes: Optional[Sequence[str]] = None,
                      iou_threshold: float = 0.5) -> dict:
    """Per-class IoU(tau) and AP50(tau) over a tolerance grid."""
    truth, predictions = list(truth), list(predictions)
    if classes is None:
        classes = sorted({r.class_name for r in truth} | {r.class_name for r in predictions})
    rows = []
    for tau in taus:
        row = {"tol": float(tau), "label": tolerance_label(tau), "classes": {}}
        for name in classes:
            t = [r for r in truth if r.class_name == name]
            p = [r for r in predictions if r.class_name == name]
            c = class_iou(t, p, name, tau, spacing)
            res = ap50(t, p, tau, iou_threshold, spacing)
            row["classes"][name] = {
                "tp": c.tp, "fn": c.fn, "fp": c.fp, "iou": iou_tol(c), "ap50": res.ap,
                "n_truth": len(t), "n_pred": len(p),
            }
        rows.append(row)
    return {"spacing": spacing, "iou_threshold": iou_threshold, "classes": list(classes), "rows": rows}


def format_report(report: dict) -> str:
    classes = report["classes"]
    head = ["Tol."] + [f"{c} IoU" for c in classes] + [f"{c} AP50" for c in classes]
    lines = []
    for row in report["rows"]:
        cells = [row["label"]]
        cells += [f"{100 * row['classes'][c]['iou']:.1f}" for c in classes]
        cells += [f"{100 * row['classes'][c]['ap50']:.1f}" for c in classes]
        lines.append(cells)
    widths = [max(len(h), *(len(r[i]) for r in lines)) if lines else len(h) for i, h in enumerate(head)]
    fmt = "  ".join("{:>%d}" % w for w in widths)
    return "\n".join([fmt.format(*head)] + [fmt.format(*r) for r in lines]) + "\n"
