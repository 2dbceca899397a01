"""Static (bag-level) and segment-based (dynamic) detection metrics.

Conventions for empty denominators: a precision or recall with nothing to
divide by is 0 and listed in ``undefined``; F1 is 0 when P + R = 0.  The
error rate is ``(S + D + I) / N`` summed over segments; when no reference
event exists at all (N = 0) it is reported as NaN with ``n_zero`` set.
"""
import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels
from .exceptions import InvalidInputError


@dataclass
class EventRoll:
    """Binary ``(T, C)`` activity matrix over fixed-length segments."""

    values: np.ndarray
    segment_duration: float

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2 or v.shape[0] < 1:
            raise InvalidInputError(f"event roll must be (T >= 1, C), got {v.shape}")
        if not np.all((v == 0) | (v == 1)):
            raise InvalidInputError("event roll entries must be 0 or 1")
        self.values = np.ascontiguousarray(v, dtype=np.int8)


@dataclass
class ClassScores:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    undefined: list = field(default_factory=list)

    @property
    def macro_precision(self):
        return float(np.mean(self.precision))

    @property
    def macro_recall(self):
        return float(np.mean(self.recall))

    @property
    def macro_f1(self):
        return float(np.mean(self.f1))

    def micro(self):
        tp, fp, fn = int(self.tp.sum()), int(self.fp.sum()), int(self.fn.sum())
        return _prf(np.array([tp]), np.array([fp]), np.array([fn]))[:3]


@dataclass
class ErrorRate:
    substitutions: int
    deletions: int
    insertions: int
    n_ref: int

    @property
    def n_zero(self):
        return self.n_ref == 0

    @property
    def value(self):
        if self.n_ref == 0:
            return math.nan
        return (self.substitutions + self.deletions + self.insertions) / self.n_ref


@dataclass
class SegmentScores(ClassScores):
    error_rate: ErrorRate | None = None


@dataclass
class EvalReport:
    static: ClassScores
    dynamic: SegmentScores
    class_names: list
    meta: dict = field(default_factory=dict)


def _prf(tp, fp, fn):
    tp, fp, fn = (np.asarray(a, dtype=np.int64) for a in (tp, fp, fn))
    undefined = []
    precision = np.zeros(tp.shape)
    recall = np.zeros(tp.shape)
    for c in range(tp.size):
        if tp[c] + fp[c] > 0:
            precision[c] = tp[c] / (tp[c] + fp[c])
        else:
            undefined.append((c, "precision"))
        if tp[c] + fn[c] > 0:
            recall[c] = tp[c] / (tp[c] + fn[c])
        else:
            undefined.append((c, "recall"))
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(tp.shape), where=denom > 0)
    return precision, recall, f1, undefined


def threshold_predictions(likelihoods, threshold=0.5):
    """Binarize likelihoods; the boundary value counts as active."""
    if not 0.0 < threshold < 1.0:
        raise InvalidInputError(f"threshold must lie in (0, 1), got {threshold}")
    return (np.asarray(likelihoods) >= threshold).astype(np.int8)


def static_prediction(instances):
    """Bag likelihood for evaluation: the maximum over instances, per class."""
    return np.max(np.asarray(instances, dtype=np.float64), axis=-2)


def static_metrics(predicted, reference):
    """Per-class and macro P/R/F1 for ``(n_bags, C)`` binary label matrices."""
    pred = np.asarray(predicted).astype(bool)
    ref = np.asarray(reference).astype(bool)
    if pred.shape != ref.shape or pred.ndim != 2:
        raise InvalidInputError(f"shape mismatch: {pred.shape} vs {ref.shape}")
    tp = np.sum(pred & ref, axis=0)
    fp = np.sum(pred & ~ref, axis=0)
    fn = np.sum(~pred & ref, axis=0)
    precision, recall, f1, undefined = _prf(tp, fp, fn)
    return ClassScores(precision, recall, f1, tp, fp, fn, undefined)


def segment_metrics(predicted, reference):
    """Segment-based P/R/F1 per class and the S/D/I error rate."""
    if predicted.values.shape != reference.values.shape:
        raise InvalidInputError(
            f"roll shapes differ: {predicted.values.shape} vs {reference.values.shape}")
    if predicted.segment_duration != reference.segment_duration:
        raise InvalidInputError("rolls use different segment durations")
    tp, fp, fn, subs, dels, ins, n_ref = kernels.segment_counts(predicted.values, reference.values)
    precision, recall, f1, undefined = _prf(tp, fp, fn)
    return SegmentScores(precision, recall, f1, tp, fp, fn, undefined,
                         error_rate=ErrorRate(subs, dels, ins, n_ref))


def frames_to_segments(frame_likelihoods, frame_rate, segment_duration=1.0, threshold=0.5):
    """Reduce ``(n_frames, C)`` frame likelihoods to a segment roll.

    Frame ``i`` belongs to the segment containing its midpoint
    ``(i + 0.5) / frame_rate``; a segment is active for a class when any of
    its frames is.  A trailing partial segment is kept when it holds at
    least one frame midpoint.
    """
    if frame_rate <= 0 or segment_duration <= 0:
        raise InvalidInputError("frame_rate and segment_duration must be positive")
    frames = threshold_predictions(frame_likelihoods, threshold)
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise InvalidInputError(f"expected (n_frames >= 1, C), got {frames.shape}")
    mids = (np.arange(frames.shape[0]) + 0.5) / frame_rate
    seg = np.floor(mids / segment_duration).astype(np.int64)
    roll = np.zeros((int(seg[-1]) + 1, frames.shape[1]), dtype=np.int8)
    np.maximum.at(roll, seg, frames)
    return EventRoll(roll, segment_duration)


def evaluate_bags(instance_likelihoods, weak_labels, strong_labels, frame_rate,
                  segment_duration=1.0, threshold=0.5, class_names=None):
    """Full report for a list of bags.

    ``instance_likelihoods`` and ``strong_labels`` are sequences of
    ``(m_i, C)`` arrays; segment rolls of all bags are concatenated before
    scoring.  ``strong_labels`` may be None, in which case only the static
    part is meaningful and the dynamic part is empty.
    """
    probs = [np.asarray(p) for p in instance_likelihoods]
    n_classes = probs[0].shape[1]
    bag_pred = threshold_predictions(np.stack([static_prediction(p) for p in probs]), threshold)
    static = static_metrics(bag_pred, np.asarray(weak_labels))
    if strong_labels is None:
        empty = np.zeros(n_classes)
        dynamic = SegmentScores(empty, empty, empty, empty.astype(int), empty.astype(int),
                                empty.astype(int), [], ErrorRate(0, 0, 0, 0))
    else:
        pred_rolls = [frames_to_segments(p, frame_rate, segment_duration, threshold).values
                      for p in probs]
        ref_rolls = [frames_to_segments(np.asarray(s, dtype=np.float64), frame_rate,
                                        segment_duration, 0.5).values for s in strong_labels]
        dynamic = segment_metrics(EventRoll(np.concatenate(pred_rolls), segment_duration),
                                  EventRoll(np.concatenate(ref_rolls), segment_duration))
    names = list(class_names) if class_names is not None else [str(c) for c in range(n_classes)]
    return EvalReport(static, dynamic, names,
                      {"segment_duration": segment_duration, "threshold": threshold,
                       "frame_rate": frame_rate, "n_bags": len(probs)})


def _scores_dict(scores, names):
    d = {
        "per_class": [
            {"class": names[c], "precision": float(scores.precision[c]),
             "recall": float(scores.recall[c]), "f1": float(scores.f1[c]),
             "tp": int(scores.tp[c]), "fp": int(scores.fp[c]), "fn": int(scores.fn[c])}
            for c in range(len(names))
        ],
        "macro": {"precision": scores.macro_precision, "recall": scores.macro_recall,
                  "f1": scores.macro_f1},
        "undefined": [{"class": names[c], "metric": m} for c, m in scores.undefined],
    }
    p, r, f = scores.micro()
    d["micro"] = {"precision": float(p[0]), "recall": float(r[0]), "f1": float(f[0])}
    return d


def report_to_dict(report):
    er = report.dynamic.error_rate
    dynamic = _scores_dict(report.dynamic, report.class_names)
    dynamic["error_rate"] = {
        "E": None if er.n_zero else er.value,
        "substitutions": er.substitutions, "deletions": er.deletions,
        "insertions": er.insertions, "N": er.n_ref, "n_zero": er.n_zero,
    }
    return {
        "class_names": report.class_names,
        "meta": report.meta,
        "static": _scores_dict(report.static, report.class_names),
        "dynamic": dynamic,
    }


def write_report_json(path, report):
    with open(path, "w") as fh:
        json.dump(report_to_dict(report), fh, indent=1)
        fh.write("\n")


REPORT_COLUMNS = ["scope", "class", "static_precision", "static_recall", "static_f1",
                  "dynamic_precision", "dynamic_recall", "dynamic_f1", "error_rate",
                  "substitutions", "deletions", "insertions", "n_ref"]


def write_report_csv(path, report):
    """One row per class plus a ``macro`` row carrying the error rate."""
    s, d = report.static, report.dynamic
    er = d.error_rate
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for c, name in enumerate(report.class_names):
            w.writerow(["class", name, repr(float(s.precision[c])), repr(float(s.recall[c])),
                        repr(float(s.f1[c])), repr(float(d.precision[c])),
                        repr(float(d.recall[c])), repr(float(d.f1[c])), "", "", "", "", ""])
        w.writerow(["macro", "", repr(s.macro_precision), repr(s.macro_recall), repr(s.macro_f1),
                    repr(d.macro_precision), repr(d.macro_recall), repr(d.macro_f1),
                    "" if er.n_zero else repr(er.value), er.substitutions, er.deletions,
                    er.insertions, er.n_ref])
