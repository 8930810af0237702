"""Evaluation metrics for binary multi-label classifiers.

Per-class precision/recall/F1, sensitivity/specificity, rank-based AUC, and
nonparametric bootstrap confidence intervals. Division-by-zero cells yield 0
together with a degenerate flag instead of an error, so macro averages stay
total while the undefined cells remain auditable.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence, TextIO

import numpy as np

from .errors import CxrPipeError, InvariantViolation
from .labeling import ALL_CLASSES, LabelVector

# Bootstrap replicate streams are spawned as default_rng((seed, replicate_index)):
# NumPy's PCG64 seeded through SeedSequence entropy pooling. Every replicate is
# independent of thread scheduling, so parallel and serial runs agree bit-exactly.
BOOTSTRAP_REPLICATES = 3000
CI_LO_PCT = 2.5
CI_HI_PCT = 97.5


class LengthMismatch(CxrPipeError):
    """Paired vectors of different lengths."""


class SingleClass(CxrPipeError):
    """AUC needs both a positive and a negative in the truth vector."""


class TooFewSamples(CxrPipeError):
    """Bootstrap needs at least two samples."""


class EmptyInput(CxrPipeError):
    """An aggregate over zero elements."""


class KeyMismatch(CxrPipeError):
    """Two label files whose study_uid sets differ."""


class BadScoreFile(CxrPipeError):
    """Score CSV with a wrong header or out-of-range values."""


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 0:
                raise InvariantViolation(f"{name} must be a non-negative integer, got {value!r}")

    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class Prf1:
    precision: float
    recall: float
    f1: float
    # names of cells that hit a 0/0 and were pinned to 0
    degenerate: frozenset[str] = frozenset()


@dataclass(frozen=True)
class SensSpec:
    sensitivity: float
    specificity: float
    degenerate: frozenset[str] = frozenset()


def confusion(predicted: Sequence[int], truth: Sequence[int]) -> ConfusionCounts:
    """Tally standard confusion counts for two equal-length binary vectors."""
    if len(predicted) != len(truth):
        raise LengthMismatch(f"predicted has {len(predicted)} items, truth has {len(truth)}")
    if len(truth) == 0:
        raise EmptyInput("cannot tally an empty pair of vectors")
    tp = fp = tn = fn = 0
    for p, t in zip(predicted, truth):
        if p not in (0, 1) or t not in (0, 1):
            raise InvariantViolation(f"labels must be binary, got ({p!r}, {t!r})")
        if p == 1:
            if t == 1:
                tp += 1
            else:
                fp += 1
        else:
            if t == 1:
                fn += 1
            else:
                tn += 1
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def prf1(c: ConfusionCounts) -> Prf1:
    if c.total() == 0:
        raise EmptyInput("cannot derive metrics from all-zero counts")
    degenerate = set()
    if c.tp + c.fp == 0:
        precision = 0.0
        degenerate.add("precision")
    else:
        precision = c.tp / (c.tp + c.fp)
    if c.tp + c.fn == 0:
        recall = 0.0
        degenerate.add("recall")
    else:
        recall = c.tp / (c.tp + c.fn)
    if precision + recall == 0.0:
        f1 = 0.0
        degenerate.add("f1")
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return Prf1(precision=precision, recall=recall, f1=f1, degenerate=frozenset(degenerate))


def sens_spec(c: ConfusionCounts) -> SensSpec:
    if c.total() == 0:
        raise EmptyInput("cannot derive metrics from all-zero counts")
    degenerate = set()
    if c.tp + c.fn == 0:
        sensitivity = 0.0
        degenerate.add("sensitivity")
    else:
        sensitivity = c.tp / (c.tp + c.fn)
    if c.tn + c.fp == 0:
        specificity = 0.0
        degenerate.add("specificity")
    else:
        specificity = c.tn / (c.tn + c.fp)
    return SensSpec(
        sensitivity=sensitivity, specificity=specificity, degenerate=frozenset(degenerate)
    )


def auc(scores: Sequence[float], truth: Sequence[int]) -> float:
    """Area under the ROC curve via the Mann-Whitney rank statistic.

    Ties get midranks, so equal scores contribute half a concordant pair.
    Invariant under any strictly increasing transform of the scores.
    """
    if len(scores) != len(truth):
        raise LengthMismatch(f"scores has {len(scores)} items, truth has {len(truth)}")
    y = np.asarray(truth)
    if not np.isin(y, (0, 1)).all():
        raise InvariantViolation("truth must be binary")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass(f"need both classes, got {n_pos} positives / {n_neg} negatives")
    s = np.asarray(scores, dtype=float)
    order = np.argsort(s, kind="mergesort")
    _, starts, counts = np.unique(s[order], return_index=True, return_counts=True)
    # 1-based midrank of a tie group starting at 0-based index i with c members
    midranks_sorted = np.repeat(starts + (counts + 1) / 2.0, counts)
    ranks = np.empty(len(s), dtype=float)
    ranks[order] = midranks_sorted
    pos_rank_sum = float(ranks[y == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def macro_average(values: Mapping[str, float]) -> float:
    if not values:
        raise EmptyInput("macro average over zero classes")
    return sum(values.values()) / len(values)


def _replicate_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng((seed, index))


def bootstrap_ci(
    samples: Sequence,
    statistic: Callable[[Sequence], float],
    replicates: int = BOOTSTRAP_REPLICATES,
    seed: int = 0,
    workers: int | None = None,
) -> tuple[float, float]:
    """95% percentile bootstrap interval for statistic(samples).

    Each replicate resamples len(samples) items with replacement from its own
    (seed, replicate index) generator stream and the 2.5/97.5 percentiles are
    taken with linear interpolation. Fixed seed → identical interval, with or
    without worker threads.
    """
    n = len(samples)
    if n < 2:
        raise TooFewSamples(f"need at least 2 samples, got {n}")
    if replicates < 1:
        raise InvariantViolation("replicates must be at least 1")

    def one(index: int) -> float:
        idx = _replicate_rng(seed, index).integers(0, n, size=n)
        return float(statistic([samples[j] for j in idx]))

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            stats = np.fromiter(pool.map(one, range(replicates)), dtype=float, count=replicates)
    else:
        stats = np.fromiter(map(one, range(replicates)), dtype=float, count=replicates)
    lo, hi = np.percentile(stats, [CI_LO_PCT, CI_HI_PCT])
    return float(lo), float(hi)


# ---------------------------------------------------------------------------
# Whole-file evaluation.

@dataclass(frozen=True)
class ClassMetrics:
    counts: ConfusionCounts
    precision: float
    recall: float
    f1: float
    sensitivity: float
    specificity: float
    degenerate: frozenset[str]
    auc: float | None = None


@dataclass
class MetricsReport:
    n: int
    per_class: dict[str, ClassMetrics]
    macro: dict[str, float]
    ci: dict[str, tuple[float, float]] = field(default_factory=dict)


def _aligned_matrices(
    auto: Iterable[tuple[str, LabelVector]], truth: Iterable[tuple[str, LabelVector]]
) -> tuple[list[str], np.ndarray, np.ndarray]:
    auto_map = dict(auto)
    truth_map = dict(truth)
    if set(auto_map) != set(truth_map):
        missing = sorted(set(truth_map) - set(auto_map))[:5]
        extra = sorted(set(auto_map) - set(truth_map))[:5]
        raise KeyMismatch(f"study_uid sets differ; missing={missing} extra={extra}")
    if not auto_map:
        raise EmptyInput("no rows to evaluate")
    uids = sorted(auto_map)
    pred = np.array([auto_map[u].as_tuple() for u in uids], dtype=np.int8)
    true = np.array([truth_map[u].as_tuple() for u in uids], dtype=np.int8)
    return uids, pred, true


def _f1_from_matrices(pred: np.ndarray, true: np.ndarray) -> np.ndarray:
    """Vectorized per-class F1 with degenerate cells pinned to 0."""
    tp = ((pred == 1) & (true == 1)).sum(axis=0).astype(float)
    fp = ((pred == 1) & (true == 0)).sum(axis=0).astype(float)
    fn = ((pred == 0) & (true == 1)).sum(axis=0).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1), 0.0)
        recall = np.where(tp + fn > 0, tp / np.maximum(tp + fn, 1), 0.0)
        psum = precision + recall
        f1 = np.where(psum > 0, 2 * precision * recall / np.maximum(psum, 1e-300), 0.0)
    return f1


def evaluate_labeler(
    auto: Iterable[tuple[str, LabelVector]],
    truth: Iterable[tuple[str, LabelVector]],
    scores: Mapping[str, Mapping[str, float]] | None = None,
    bootstrap_replicates: int | None = None,
    seed: int = 0,
) -> MetricsReport:
    """Compare auto labels against reference labels, per class and macro.

    With bootstrap_replicates set, percentile CIs are added for each class F1
    and the macro F1, resampling whole studies so classes stay consistent
    within a replicate. With scores given (study_uid → class → real), AUC is
    added per class where both truth classes occur.
    """
    uids, pred, true = _aligned_matrices(auto, truth)
    per_class: dict[str, ClassMetrics] = {}
    for k, cls in enumerate(ALL_CLASSES):
        counts = confusion(pred[:, k].tolist(), true[:, k].tolist())
        p = prf1(counts)
        s = sens_spec(counts)
        cls_auc = None
        if scores is not None:
            vec = [float(scores[u][cls]) for u in uids]
            col = true[:, k]
            if 0 < int(col.sum()) < len(col):
                cls_auc = auc(vec, col.tolist())
        per_class[cls] = ClassMetrics(
            counts=counts,
            precision=p.precision,
            recall=p.recall,
            f1=p.f1,
            sensitivity=s.sensitivity,
            specificity=s.specificity,
            degenerate=p.degenerate | s.degenerate,
            auc=cls_auc,
        )
    macro = {
        metric: macro_average({cls: getattr(m, metric) for cls, m in per_class.items()})
        for metric in ("precision", "recall", "f1", "sensitivity", "specificity")
    }
    auc_values = {cls: m.auc for cls, m in per_class.items() if m.auc is not None}
    if auc_values:
        macro["auc"] = macro_average(auc_values)

    report = MetricsReport(n=len(uids), per_class=per_class, macro=macro)
    if bootstrap_replicates:
        n = len(uids)
        if n < 2:
            raise TooFewSamples(f"need at least 2 samples, got {n}")
        f1s = np.empty((bootstrap_replicates, len(ALL_CLASSES)), dtype=float)
        for i in range(bootstrap_replicates):
            idx = _replicate_rng(seed, i).integers(0, n, size=n)
            f1s[i] = _f1_from_matrices(pred[idx], true[idx])
        for k, cls in enumerate(ALL_CLASSES):
            lo, hi = np.percentile(f1s[:, k], [CI_LO_PCT, CI_HI_PCT])
            report.ci[f"f1.{cls}"] = (float(lo), float(hi))
        macro_f1s = f1s.mean(axis=1)
        lo, hi = np.percentile(macro_f1s, [CI_LO_PCT, CI_HI_PCT])
        report.ci["f1.macro"] = (float(lo), float(hi))
    return report


def report_to_dict(report: MetricsReport) -> dict:
    return {
        "n": report.n,
        "per_class": {
            cls: {
                "tp": m.counts.tp,
                "fp": m.counts.fp,
                "tn": m.counts.tn,
                "fn": m.counts.fn,
                "precision": m.precision,
                "recall": m.recall,
                "f1": m.f1,
                "sensitivity": m.sensitivity,
                "specificity": m.specificity,
                "degenerate": sorted(m.degenerate),
                **({"auc": m.auc} if m.auc is not None else {}),
            }
            for cls, m in report.per_class.items()
        },
        "macro": dict(report.macro),
        "ci": {k: list(v) for k, v in report.ci.items()},
    }


def format_table(report: MetricsReport) -> str:
    """Fixed-width text table mirroring the structured report."""
    header = f"{'class':<12} {'tp':>6} {'fp':>6} {'tn':>6} {'fn':>6} {'prec':>8} {'rec':>8} {'f1':>8} {'spec':>8}"
    lines = [header, "-" * len(header)]
    for cls, m in report.per_class.items():
        c = m.counts
        lines.append(
            f"{cls:<12} {c.tp:>6} {c.fp:>6} {c.tn:>6} {c.fn:>6}"
            f" {m.precision:>8.4f} {m.recall:>8.4f} {m.f1:>8.4f} {m.specificity:>8.4f}"
        )
    lines.append(
        f"{'macro':<12} {'':>6} {'':>6} {'':>6} {'':>6}"
        f" {report.macro['precision']:>8.4f} {report.macro['recall']:>8.4f}"
        f" {report.macro['f1']:>8.4f} {report.macro['specificity']:>8.4f}"
    )
    for key in sorted(report.ci):
        lo, hi = report.ci[key]
        lines.append(f"ci95 {key:<20} [{lo:.4f}, {hi:.4f}]")
    return "\n".join(lines) + "\n"


# Optional AUC input: per-class real-valued scores, one row per study.

def read_score_csv(source: TextIO | str | Path) -> dict[str, dict[str, float]]:
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8", newline="") as fh:
            return read_score_csv(fh)
    reader = csv.reader(source)
    header = next(reader, None)
    if header != ["study_uid", *ALL_CLASSES]:
        raise BadScoreFile(f"bad score CSV header: {header!r}")
    out: dict[str, dict[str, float]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 1 + len(ALL_CLASSES):
            raise BadScoreFile(f"line {lineno}: wrong field count")
        uid, *values = row
        try:
            reals = [float(v) for v in values]
        except ValueError as exc:
            raise BadScoreFile(f"line {lineno}: non-numeric score") from exc
        if any(not 0.0 <= v <= 1.0 for v in reals):
            raise BadScoreFile(f"line {lineno}: score out of [0,1]")
        out[uid] = dict(zip(ALL_CLASSES, reals))
    return out
