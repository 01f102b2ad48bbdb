"""Evaluation metrics from prediction files: confusion matrix, per-class
precision/recall/specificity/F1, accuracy, multiclass MCC, one-vs-rest AUC,
and across-run summaries.

Predictions enter through a delimited text file with header
``frame_id, run, true, pred, s0, s1, s2, s3`` - the boundary any external
classifier has to meet. Labels are the stable ordinals of
:class:`otopipe.manifest.ClassLabel`.

Aggregates are emitted both macro- (unweighted class mean) and micro-
averaged, clearly labeled; for single-label multiclass data the micro
precision/recall/F1 all equal accuracy.

Degenerate 0/0 ratios are returned as 0.0 and flagged rather than raised,
so a run with an empty class still produces a complete report.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, FormatError
from .manifest import ALL_LABELS, N_CLASSES, ClassLabel
from .splitting import SplitAssignment

SCORE_TOLERANCE = 1e-6


@dataclass(frozen=True)
class PredictionRow:
    frame_id: str
    run_index: int
    true_label: ClassLabel
    predicted_label: ClassLabel
    scores: tuple[float, float, float, float]


def validate_predictions(
    rows: Sequence[PredictionRow], assignment: SplitAssignment | None = None
) -> list[str]:
    """Soft checks; returns warnings, raises only on structurally bad rows."""
    warnings: list[str] = []
    for row in rows:
        if len(row.scores) != N_CLASSES:
            raise DataError(f"frame {row.frame_id}: expected {N_CLASSES} scores")
        if any(s < 0 for s in row.scores):
            raise DataError(f"frame {row.frame_id}: negative score")
        if abs(sum(row.scores) - 1.0) > SCORE_TOLERANCE:
            raise DataError(
                f"frame {row.frame_id}: scores sum to {sum(row.scores)!r}, expected 1"
            )
        argmax = max(range(N_CLASSES), key=lambda i: row.scores[i])
        if row.scores[argmax] > row.scores[row.predicted_label] + 1e-12:
            warnings.append(
                f"frame {row.frame_id}: predicted label {row.predicted_label.canonical_name} "
                f"is not the score argmax"
            )
    if assignment is not None:
        strays = {r.frame_id for r in rows} - assignment.test
        if strays:
            warnings.append(
                f"{len(strays)} predicted frames are not on the test side of the assignment"
            )
    return warnings


def confusion(rows: Sequence[PredictionRow], run_index: int) -> np.ndarray:
    """4x4 count matrix; entry (i, j) counts true class i predicted as j."""
    cm = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    seen = False
    for row in rows:
        if row.run_index != run_index:
            continue
        seen = True
        cm[int(row.true_label), int(row.predicted_label)] += 1
    if not seen:
        raise DataError(f"no prediction rows for run {run_index}")
    return cm


@dataclass(frozen=True)
class ClassMetrics:
    label: ClassLabel
    precision: float
    recall: float
    specificity: float
    f1: float
    support: int
    degenerate: bool  # some 0/0 ratio was returned as 0


def _ratio(num: float, den: float) -> tuple[float, bool]:
    if den == 0:
        return 0.0, True
    return num / den, False


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall; 0 when both are 0."""
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def per_class_metrics(cm: np.ndarray) -> list[ClassMetrics]:
    """One-vs-rest precision, recall, specificity and F1 for each class."""
    cm = np.asarray(cm)
    total = int(cm.sum())
    if total <= 0:
        raise DataError("confusion matrix is empty")
    out: list[ClassMetrics] = []
    for label in ALL_LABELS:
        c = int(label)
        tp = int(cm[c, c])
        fn = int(cm[c, :].sum()) - tp
        fp = int(cm[:, c].sum()) - tp
        tn = total - tp - fn - fp
        precision, d1 = _ratio(tp, tp + fp)
        recall, d2 = _ratio(tp, tp + fn)
        specificity, d3 = _ratio(tn, tn + fp)
        out.append(
            ClassMetrics(
                label=label,
                precision=precision,
                recall=recall,
                specificity=specificity,
                f1=f1_score(precision, recall),
                support=tp + fn,
                degenerate=d1 or d2 or d3,
            )
        )
    return out


def mcc(cm: np.ndarray) -> float:
    """Multiclass Matthews correlation coefficient in [-1, 1].

    With c = trace, s = total, p_k = predicted-count and t_k = true-count of
    class k:  (c*s - sum p_k t_k) / sqrt((s^2 - sum p_k^2)(s^2 - sum t_k^2)).
    Returns 0.0 when the denominator vanishes (e.g. a single predicted class).
    """
    cm = np.asarray(cm, dtype=np.int64)
    total = int(cm.sum())
    if total <= 0:
        raise DataError("confusion matrix is empty")
    t = cm.sum(axis=1)
    p = cm.sum(axis=0)
    c = int(np.trace(cm))
    s = total
    num = c * s - int(t @ p)
    d1 = s * s - int(p @ p)
    d2 = s * s - int(t @ t)
    if d1 == 0 or d2 == 0:
        return 0.0
    return num / math.sqrt(float(d1) * float(d2))


def _tied_ranks(values: Sequence[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        # 1-based ranks, ties share the midrank
        mid = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = mid
        i = j + 1
    return ranks


def ovr_auc(
    rows: Sequence[PredictionRow], run_index: int
) -> tuple[dict[ClassLabel, float | None], float | None]:
    """One-vs-rest ROC AUC per class plus the macro average.

    AUC is computed by the rank (Mann-Whitney) formula with tied scores
    contributing half credit. A class with no positives or no negatives gets
    None and is excluded from the macro mean.
    """
    run_rows = [r for r in rows if r.run_index == run_index]
    if not run_rows:
        raise DataError(f"no prediction rows for run {run_index}")
    per_class: dict[ClassLabel, float | None] = {}
    usable: list[float] = []
    for label in ALL_LABELS:
        c = int(label)
        scores = [r.scores[c] for r in run_rows]
        positives = [r.true_label == label for r in run_rows]
        n_pos = sum(positives)
        n_neg = len(run_rows) - n_pos
        if n_pos == 0 or n_neg == 0:
            per_class[label] = None
            continue
        ranks = _tied_ranks(scores)
        rank_sum = sum(rank for rank, pos in zip(ranks, positives) if pos)
        auc = (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
        per_class[label] = auc
        usable.append(auc)
    macro = sum(usable) / len(usable) if usable else None
    return per_class, macro


@dataclass(frozen=True)
class MetricsReport:
    """Everything computed from one evaluation run."""

    run_index: int
    cm: np.ndarray
    per_class: tuple[ClassMetrics, ...]
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_specificity: float
    macro_f1: float
    micro_precision: float
    micro_recall: float
    micro_f1: float
    mcc: float
    auc_per_class: tuple[float | None, ...]
    macro_auc: float | None

    def aggregate_metrics(self) -> dict[str, float]:
        """Named scalar metrics, for run summaries and delta reports."""
        out = {
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_specificity": self.macro_specificity,
            "macro_f1": self.macro_f1,
            "micro_precision": self.micro_precision,
            "micro_recall": self.micro_recall,
            "micro_f1": self.micro_f1,
            "mcc": self.mcc,
        }
        if self.macro_auc is not None:
            out["macro_auc"] = self.macro_auc
        return out


def evaluate_run(rows: Sequence[PredictionRow], run_index: int) -> MetricsReport:
    """Compute the full metric suite for one run of predictions."""
    cm = confusion(rows, run_index)
    per_class = per_class_metrics(cm)
    total = int(cm.sum())
    accuracy = float(np.trace(cm)) / total
    auc_per_class, macro_auc = ovr_auc(rows, run_index)
    return MetricsReport(
        run_index=run_index,
        cm=cm,
        per_class=tuple(per_class),
        accuracy=accuracy,
        macro_precision=sum(m.precision for m in per_class) / N_CLASSES,
        macro_recall=sum(m.recall for m in per_class) / N_CLASSES,
        macro_specificity=sum(m.specificity for m in per_class) / N_CLASSES,
        macro_f1=sum(m.f1 for m in per_class) / N_CLASSES,
        micro_precision=accuracy,
        micro_recall=accuracy,
        micro_f1=accuracy,
        mcc=mcc(cm),
        auc_per_class=tuple(auc_per_class[label] for label in ALL_LABELS),
        macro_auc=macro_auc,
    )


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    variance: float | None  # sample variance (n-1); None for a single run
    std: float | None
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float


@dataclass(frozen=True)
class RunSummary:
    run_count: int
    metrics: dict[str, MetricSummary]


def quartiles(values: Sequence[float]) -> tuple[float, float, float]:
    """(Q1, median, Q3) by linear interpolation over the sorted sample.

    This is the common 'linear' rule (R type 7): quantile q sits at sorted
    position q * (n - 1), interpolating between neighbors.
    """
    data = sorted(values)
    n = len(data)
    if n == 0:
        raise DataError("quartiles of an empty sample")

    def at(q: float) -> float:
        pos = q * (n - 1)
        lo = int(math.floor(pos))
        hi = min(lo + 1, n - 1)
        frac = pos - lo
        return data[lo] * (1 - frac) + data[hi] * frac

    return at(0.25), at(0.5), at(0.75)


def summarize_values(values: Sequence[float]) -> MetricSummary:
    n = len(values)
    if n == 0:
        raise DataError("cannot summarize zero runs")
    mean = math.fsum(values) / n
    if n > 1:
        variance = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
        std = math.sqrt(variance)
    else:
        variance = None
        std = None
    q1, median, q3 = quartiles(values)
    return MetricSummary(
        mean=mean,
        variance=variance,
        std=std,
        minimum=min(values),
        q1=q1,
        median=median,
        q3=q3,
        maximum=max(values),
    )


def summarize_runs(reports: Sequence[MetricsReport]) -> RunSummary:
    """Five-number summary, mean and sample variance of each metric across runs.

    Metrics missing in some run (an undefined AUC) are summarized over the
    runs where they exist.
    """
    if not reports:
        raise DataError("summarize_runs needs at least one report")
    values: dict[str, list[float]] = {}
    for report in reports:
        for name, value in report.aggregate_metrics().items():
            values.setdefault(name, []).append(value)
    return RunSummary(
        run_count=len(reports),
        metrics={name: summarize_values(vals) for name, vals in sorted(values.items())},
    )


PREDICTION_HEADER = "frame_id\trun\ttrue\tpred\ts0\ts1\ts2\ts3"


def save_predictions(rows: Iterable[PredictionRow], path: str | os.PathLike) -> None:
    lines = [PREDICTION_HEADER]
    for r in rows:
        scores = "\t".join(repr(float(s)) for s in r.scores)
        lines.append(
            f"{r.frame_id}\t{r.run_index}\t{int(r.true_label)}\t{int(r.predicted_label)}\t{scores}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_predictions(path: str | os.PathLike) -> list[PredictionRow]:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != PREDICTION_HEADER:
        raise FormatError(
            f"{path}: bad prediction header, expected {PREDICTION_HEADER!r}", line=1
        )
    rows: list[PredictionRow] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 8:
            raise FormatError(f"{path}: expected 8 fields, got {len(fields)}", line=lineno)
        try:
            run_index = int(fields[1])
            true_label = ClassLabel(int(fields[2]))
            pred_label = ClassLabel(int(fields[3]))
            scores = tuple(float(s) for s in fields[4:8])
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}", line=lineno) from None
        rows.append(
            PredictionRow(
                frame_id=fields[0],
                run_index=run_index,
                true_label=true_label,
                predicted_label=pred_label,
                scores=scores,  # type: ignore[arg-type]
            )
        )
    return rows


def run_indices(rows: Sequence[PredictionRow]) -> list[int]:
    return sorted({r.run_index for r in rows})
