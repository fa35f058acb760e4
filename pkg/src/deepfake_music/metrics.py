"""Confusion-matrix accounting and the seven reported classification metrics.

Positive class is HUMAN throughout: recall measures how reliably human music
is recognized as human, and a false positive is a deepfake passed off as human.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .dataset import HUMAN, LABELS
from .errors import ClassAbsent, LengthMismatch

COLUMNS = ("f1", "accuracy", "recall", "fpr", "fnr", "precision", "specificity")
CSV_HEADER = "data_source," + ",".join(COLUMNS)


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fn: int
    fp: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fn, self.fp, self.tn) < 0:
            raise ValueError(f"negative count in {self}")

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.fp + self.tn

    def transposed(self) -> "ConfusionMatrix":
        """Same predictions scored with deepfake as the positive class."""
        return ConfusionMatrix(tp=self.tn, fn=self.fp, fp=self.fn, tn=self.tp)


@dataclass(frozen=True)
class MetricsReport:
    source: str
    f1: float
    accuracy: float
    recall: float
    fpr: float
    fnr: float
    precision: float
    specificity: float
    precision_undefined: bool = False
    f1_undefined: bool = False

    def values(self) -> tuple[float, ...]:
        return tuple(getattr(self, c) for c in COLUMNS)


def _as_label(x) -> str:
    if isinstance(x, str):
        if x not in LABELS:
            raise ValueError(f"unknown label {x!r}")
        return x
    return LABELS[int(x)]


def confusion(predictions: Sequence, truths: Sequence) -> ConfusionMatrix:
    """Tally predictions against truths. Labels may be strings or class ids (0 deepfake, 1 human)."""
    if len(predictions) != len(truths):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(truths)} truths")
    if len(truths) == 0:
        raise LengthMismatch("cannot tally an empty sequence")
    tp = fn = fp = tn = 0
    for p, t in zip(predictions, truths):
        p_human = _as_label(p) == HUMAN
        t_human = _as_label(t) == HUMAN
        if t_human:
            tp += p_human
            fn += not p_human
        else:
            fp += p_human
            tn += not p_human
    return ConfusionMatrix(tp, fn, fp, tn)


def exact_rates(cm: ConfusionMatrix) -> dict[str, Fraction]:
    """All seven metrics as exact rationals (zero-denominator cases mapped to 0)."""
    if cm.tp + cm.fn == 0 or cm.fp + cm.tn == 0:
        raise ClassAbsent(f"both classes must be present in the ground truth: {cm}")
    pos = cm.tp + cm.fn
    neg = cm.fp + cm.tn
    recall = Fraction(cm.tp, pos)
    precision = Fraction(cm.tp, cm.tp + cm.fp) if cm.tp + cm.fp else Fraction(0)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else Fraction(0)
    return {
        "f1": f1,
        "accuracy": Fraction(cm.tp + cm.tn, cm.total),
        "recall": recall,
        "fpr": Fraction(cm.fp, neg),
        "fnr": Fraction(cm.fn, pos),
        "precision": precision,
        "specificity": Fraction(cm.tn, neg),
    }


def compute_metrics(cm: ConfusionMatrix, source: str = "") -> MetricsReport:
    rates = exact_rates(cm)
    return MetricsReport(
        source=source,
        **{k: float(v) for k, v in rates.items()},
        precision_undefined=cm.tp + cm.fp == 0,
        f1_undefined=rates["precision"] + rates["recall"] == 0,
    )


def to_csv(reports: Sequence[MetricsReport]) -> str:
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    for r in reports:
        buf.write(",".join([r.source] + [f"{v:.3f}" for v in r.values()]) + "\n")
    return buf.getvalue()


def format_table(reports: Sequence[MetricsReport]) -> str:
    """Aligned plain-text rendering for terminals."""
    titles = ("Data Source", "F1", "Accuracy", "Recall", "FPR", "FNR", "Precision", "Specificity")
    rows = [[r.source] + [f"{v:.3f}" for v in r.values()] for r in reports]
    widths = [max(len(t), *(len(row[i]) for row in rows)) if rows else len(t) for i, t in enumerate(titles)]
    lines = ["  ".join(t.ljust(w) if i == 0 else t.rjust(w) for i, (t, w) in enumerate(zip(titles, widths)))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))))
    return "\n".join(lines)


# Published results, as printed (3 decimals), in column order.
PUBLISHED_TABLE = (
    ("Baseline", (0.878, 0.885, 0.847, 0.078, 0.153, 0.911, 0.922)),
    ("Tempo Stretch", (0.843, 0.854, 0.810, 0.105, 0.190, 0.879, 0.895)),
    ("Pitch Shift", (0.856, 0.868, 0.810, 0.078, 0.190, 0.907, 0.922)),
    ("Pitch Shift + Tempo Stretch", (0.837, 0.844, 0.799, 0.105, 0.201, 0.878, 0.895)),
    ("Continuous Learning", (0.842, 0.835, 0.889, 0.217, 0.111, 0.800, 0.783)),
)

F1_TOL = 0.002
COMPLEMENT_TOL = 0.001


@dataclass(frozen=True)
class AuditRow:
    source: str
    f1_gap: float
    recall_fnr_gap: float
    fpr_spec_gap: float

    @property
    def passed(self) -> bool:
        return (self.f1_gap <= F1_TOL and self.recall_fnr_gap <= COMPLEMENT_TOL
                and self.fpr_spec_gap <= COMPLEMENT_TOL)


def published_reports() -> list[MetricsReport]:
    return [MetricsReport(name, *vals) for name, vals in PUBLISHED_TABLE]


def audit_report(r: MetricsReport) -> AuditRow:
    harmonic = 2 * r.precision * r.recall / (r.precision + r.recall) if r.precision + r.recall else 0.0
    return AuditRow(
        source=r.source,
        f1_gap=abs(r.f1 - harmonic),
        recall_fnr_gap=abs(r.recall + r.fnr - 1.0),
        fpr_spec_gap=abs(r.fpr + r.specificity - 1.0),
    )


def audit_published_table() -> list[AuditRow]:
    return [audit_report(r) for r in published_reports()]
