"""Confusion-matrix bookkeeping and the detection/segmentation metric suite.

Metrics with a zero denominator are reported as ``None`` (undefined), never
coerced to 0. Percent formatting uses round-half-even at two decimals, the
same convention as the published result tables this pipeline is checked
against.

Confidence intervals use the normal approximation r = z*sqrt(m(1-m)/n). The
``n`` for each metric is the size of the population the rate is estimated
over: positives for sensitivity, negatives for specificity, all samples for
precision, accuracy, and F-scores. This choice reproduces the published CI
columns from the published confusion matrices.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_Z = 1.96

METRIC_NAMES = ("sensitivity", "specificity", "precision", "accuracy", "f1", "f2")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        for name in ("tp", "tn", "fp", "fn"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v!r}")

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(
            tp=self.tp + other.tp,
            tn=self.tn + other.tn,
            fp=self.fp + other.fp,
            fn=self.fn + other.fn,
        )

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def as_dict(self) -> dict:
        return {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn}


@dataclass
class MetricReport:
    sensitivity: float | None
    specificity: float | None
    precision: float | None
    accuracy: float | None
    f1: float | None
    f2: float | None
    ci: dict = field(default_factory=dict)
    n: int = 0
    level: str = "sample"
    cm: ConfusionMatrix | None = None

    def metric(self, name: str) -> float | None:
        if name not in METRIC_NAMES:
            raise KeyError(f"unknown metric {name!r}")
        return getattr(self, name)

    def as_dict(self) -> dict:
        out = {name: self.metric(name) for name in METRIC_NAMES}
        out["ci"] = dict(self.ci)
        out["n"] = self.n
        out["level"] = self.level
        if self.cm is not None:
            out["confusion"] = self.cm.as_dict()
        out["percent"] = {
            name: (format_percent(v) if v is not None else None)
            for name, v in ((m, self.metric(m)) for m in METRIC_NAMES)
        }
        return out

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.as_dict(), **kwargs)


def confusion_pixel(gt, prob, threshold: float = 0.5) -> ConfusionMatrix:
    """Pixel-level confusion of a probability field against a binary mask.

    ``gt`` may be a SegMask or a binary array; ``prob`` a ProbMask or array.
    Prediction is ``prob >= threshold``; foreground is the positive class.
    """
    g = np.asarray(getattr(gt, "pixels", gt))
    q = np.asarray(getattr(prob, "pixels", prob))
    if g.shape != q.shape:
        raise ValueError(f"shape mismatch: {g.shape} vs {q.shape}")
    pos = g == 1
    pred = q >= threshold
    return ConfusionMatrix(
        tp=int(np.sum(pred & pos)),
        tn=int(np.sum(~pred & ~pos)),
        fp=int(np.sum(pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def confusion_sample(labels, detections) -> ConfusionMatrix:
    """Sample-level confusion; labels are 'covid'/'control', covid positive."""
    if len(labels) != len(detections):
        raise ValueError("labels and detections must align")
    tp = tn = fp = fn = 0
    for label, det in zip(labels, detections):
        if label not in ("covid", "control"):
            raise ValueError(f"unknown label {label!r}")
        pos = label == "covid"
        if pos and det:
            tp += 1
        elif pos:
            fn += 1
        elif det:
            fp += 1
        else:
            tn += 1
    return ConfusionMatrix(tp=tp, tn=tn, fp=fp, fn=fn)


def accumulate(cms) -> ConfusionMatrix:
    total = ConfusionMatrix()
    for cm in cms:
        total = total + cm
    return total


def _ratio(num: int, den: int) -> float | None:
    return num / den if den > 0 else None


def f_score(precision: float | None, sensitivity: float | None, beta: float) -> float | None:
    """F(beta) = (1+b^2) * P*S / (b^2 * P + S); None if undefined."""
    if precision is None or sensitivity is None:
        return None
    den = beta**2 * precision + sensitivity
    if den == 0.0:
        return None
    return (1.0 + beta**2) * precision * sensitivity / den


def confidence_interval(metric: float, n: int, z: float = DEFAULT_Z) -> float:
    """Half-width r = z * sqrt(metric * (1 - metric) / n)."""
    if not 0.0 <= metric <= 1.0:
        raise ValueError(f"metric must be in [0,1], got {metric}")
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    return z * math.sqrt(metric * (1.0 - metric) / n)


def compute_metrics(
    cm: ConfusionMatrix,
    betas=(1, 2),
    level: str = "sample",
    z: float = DEFAULT_Z,
) -> MetricReport:
    """Full metric vector with per-metric confidence intervals."""
    if cm.total == 0:
        raise ValueError("confusion matrix is empty")
    sens = _ratio(cm.tp, cm.tp + cm.fn)
    spec = _ratio(cm.tn, cm.tn + cm.fp)
    prec = _ratio(cm.tp, cm.tp + cm.fp)
    acc = _ratio(cm.tp + cm.tn, cm.total)
    scores = {f"f{beta:g}": f_score(prec, sens, beta) for beta in betas}

    ci_n = {
        "sensitivity": cm.tp + cm.fn,
        "specificity": cm.tn + cm.fp,
        "precision": cm.total,
        "accuracy": cm.total,
    }
    values = {"sensitivity": sens, "specificity": spec, "precision": prec, "accuracy": acc}
    values.update(scores)
    ci = {}
    for name, value in values.items():
        n = ci_n.get(name, cm.total)
        ci[name] = confidence_interval(value, n, z) if value is not None and n > 0 else None

    return MetricReport(
        sensitivity=sens,
        specificity=spec,
        precision=prec,
        accuracy=acc,
        f1=scores.get("f1"),
        f2=scores.get("f2"),
        ci=ci,
        n=cm.total,
        level=level,
        cm=cm,
    )


def aggregate_folds(reports, mode: str = "cumulative") -> MetricReport:
    """Combine per-fold reports.

    ``macro_mean`` averages each metric value across folds (None if any fold
    is undefined); ``cumulative`` sums the confusion matrices and recomputes.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to aggregate")
    if mode == "cumulative":
        if any(r.cm is None for r in reports):
            raise ValueError("cumulative aggregation needs confusion matrices")
        total = accumulate(r.cm for r in reports)
        return compute_metrics(total, level=reports[0].level)
    if mode == "macro_mean":
        out = {}
        for name in METRIC_NAMES:
            vals = [r.metric(name) for r in reports]
            out[name] = None if any(v is None for v in vals) else float(np.mean(vals))
        n = sum(r.n for r in reports)
        return MetricReport(**out, ci={}, n=n, level=reports[0].level, cm=None)
    raise ValueError(f"unknown aggregation mode {mode!r}")


def map_overlap_stats(map_field: np.ndarray, gt) -> dict:
    """How much of a [0,1] map's mass falls inside a binary ground-truth mask.

    Returns ``mass_inside`` (fraction of total map mass over GT pixels) and
    ``iou_at_half`` (IoU of the map thresholded at 0.5 against GT).
    """
    m = np.asarray(getattr(map_field, "values", map_field), dtype=np.float64)
    g = np.asarray(getattr(gt, "pixels", gt))
    if m.shape != g.shape:
        raise ValueError(f"shape mismatch: {m.shape} vs {g.shape}")
    total = float(m.sum())
    inside = float(m[g == 1].sum())
    mass_inside = inside / total if total > 0 else None
    pred = m >= 0.5
    gt_pos = g == 1
    union = float(np.sum(pred | gt_pos))
    iou = float(np.sum(pred & gt_pos)) / union if union > 0 else None
    return {"mass_inside": mass_inside, "iou_at_half": iou}


def format_percent(value: float, decimals: int = 2) -> str:
    """Format a [0,1] fraction as a percent string, round-half-even."""
    from decimal import ROUND_HALF_EVEN, Decimal

    q = Decimal(10) ** -decimals
    return str((Decimal(repr(value)) * 100).quantize(q, rounding=ROUND_HALF_EVEN))
