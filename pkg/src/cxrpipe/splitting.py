"""Stratified train/validation splitting for multi-label datasets.

Greedy iterative stratification: classes are ranked by ascending positive
count, every example is grouped under its rarest positive class, and groups
are assigned rarest-first to whichever side still wants more positives of
that class. Capacities pin the exact split sizes, so per-class positive
rates land close to the full dataset's on both sides.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import CxrPipeError, InvariantViolation
from .labeling import ALL_CLASSES, LabelVector

TRAIN = "train"
VAL = "val"


class DegenerateInput(CxrPipeError):
    """Too few examples or a ratio outside (0, 1)."""


class UnknownUid(CxrPipeError):
    """A split references a uid absent from the label set."""


@dataclass(frozen=True)
class ClassRates:
    """Positive counts and rates for one class across full/train/val."""

    full_pos: int
    train_pos: int
    val_pos: int
    full_rate: float
    train_rate: float
    val_rate: float
    dev_train: float
    dev_val: float
    degenerate: bool  # 0 or n positives in the full set; excluded from tolerance

    @property
    def max_dev(self) -> float:
        return max(self.dev_train, self.dev_val)


@dataclass
class SplitResult:
    train_uids: list[str]
    val_uids: list[str]
    ratio_report: dict[str, ClassRates]
    tolerance: float
    tolerance_unmet: tuple[str, ...]  # classes whose deviation exceeds tolerance


def train_size(n: int, ratio: float) -> int:
    """Number of training examples: ratio·n rounded half-up."""
    return math.floor(ratio * n + 0.5)


def stratified_split(
    labels: Sequence[tuple[str, LabelVector]],
    ratio: float = 0.7,
    seed: int = 0,
    tolerance: float = 0.01,
) -> SplitResult:
    """Split labels into train/val with per-class rates near the full set's.

    Deterministic for a fixed seed, and invariant under permutation of the
    input list (items are canonically ordered by uid first). A class ending
    up farther than tolerance from the full-set rate is reported in
    tolerance_unmet; the split is still returned.
    """
    n = len(labels)
    if n < 10:
        raise DegenerateInput(f"need at least 10 examples, got {n}")
    if not 0.0 < ratio < 1.0:
        raise DegenerateInput(f"ratio must be inside (0, 1), got {ratio}")
    items = sorted(labels, key=lambda pair: pair[0])
    if any(items[i][0] == items[i + 1][0] for i in range(n - 1)):
        raise InvariantViolation("duplicate study_uid in split input")
    flat = [(uid, vec.as_tuple()) for uid, vec in items]

    k_classes = len(ALL_CLASSES)
    positives = [0] * k_classes
    for _, flags in flat:
        for k in range(k_classes):
            positives[k] += flags[k]
    # ascending rarity; degenerate classes carry no grouping signal
    class_order = sorted(
        (k for k in range(k_classes) if 0 < positives[k] < n),
        key=lambda k: (positives[k], k),
    )

    def rarest(flags: tuple[int, ...]) -> int | None:
        for k in class_order:
            if flags[k] == 1:
                return k
        return None

    groups: dict[int | None, list[tuple[str, tuple[int, ...]]]] = {k: [] for k in class_order}
    groups[None] = []
    for uid, flags in flat:
        groups[rarest(flags)].append((uid, flags))

    capacity = {TRAIN: train_size(n, ratio), VAL: n - train_size(n, ratio)}
    demand = {
        TRAIN: [p * ratio for p in positives],
        VAL: [p * (1.0 - ratio) for p in positives],
    }
    rng = random.Random(seed)
    sides: dict[str, list[str]] = {TRAIN: [], VAL: []}

    def pick_by_capacity() -> str:
        if capacity[TRAIN] > capacity[VAL]:
            return TRAIN
        if capacity[VAL] > capacity[TRAIN]:
            return VAL
        return rng.choice((TRAIN, VAL))

    def assign(uid: str, flags: tuple[int, ...], side: str) -> None:
        sides[side].append(uid)
        capacity[side] -= 1
        side_demand = demand[side]
        for k in range(k_classes):
            if flags[k] == 1:
                side_demand[k] -= 1.0

    for group_key in [*class_order, None]:
        for uid, flags in groups[group_key]:
            if capacity[TRAIN] == 0:
                assign(uid, flags, VAL)
                continue
            if capacity[VAL] == 0:
                assign(uid, flags, TRAIN)
                continue
            if group_key is None:
                assign(uid, flags, pick_by_capacity())
                continue
            want_train = demand[TRAIN][group_key]
            want_val = demand[VAL][group_key]
            if want_train > want_val:
                side = TRAIN
            elif want_val > want_train:
                side = VAL
            else:
                side = pick_by_capacity()
            assign(uid, flags, side)

    train_uids = sorted(sides[TRAIN])
    val_uids = sorted(sides[VAL])
    report = check_distribution_uids(train_uids, val_uids, items, tolerance)
    unmet = tuple(
        cls
        for cls in ALL_CLASSES
        if not report[cls].degenerate and report[cls].max_dev > tolerance
    )
    return SplitResult(
        train_uids=train_uids,
        val_uids=val_uids,
        ratio_report=report,
        tolerance=tolerance,
        tolerance_unmet=unmet,
    )


def check_distribution_uids(
    train_uids: Iterable[str],
    val_uids: Iterable[str],
    labels: Sequence[tuple[str, LabelVector]],
    tolerance: float = 0.01,
) -> dict[str, ClassRates]:
    """Recount per-class rates for a split, independent of how it was built."""
    by_uid = {uid: vec.as_tuple() for uid, vec in labels}
    n = len(by_uid)
    train = list(train_uids)
    val = list(val_uids)
    for uid in (*train, *val):
        if uid not in by_uid:
            raise UnknownUid(f"uid {uid!r} not present in the label set")
    report: dict[str, ClassRates] = {}
    for k, cls in enumerate(ALL_CLASSES):
        full_pos = sum(flags[k] for flags in by_uid.values())
        train_pos = sum(by_uid[u][k] for u in train)
        val_pos = sum(by_uid[u][k] for u in val)
        full_rate = full_pos / n
        train_rate = train_pos / len(train) if train else 0.0
        val_rate = val_pos / len(val) if val else 0.0
        report[cls] = ClassRates(
            full_pos=full_pos,
            train_pos=train_pos,
            val_pos=val_pos,
            full_rate=full_rate,
            train_rate=train_rate,
            val_rate=val_rate,
            dev_train=abs(train_rate - full_rate),
            dev_val=abs(val_rate - full_rate),
            degenerate=full_pos in (0, n),
        )
    return report


def check_distribution(
    result: SplitResult,
    labels: Sequence[tuple[str, LabelVector]],
    tolerance: float = 0.01,
) -> dict[str, ClassRates]:
    return check_distribution_uids(result.train_uids, result.val_uids, labels, tolerance)


def split_report_dict(result: SplitResult) -> dict:
    """JSON-ready form of a split result (uids excluded; they ship separately)."""
    return {
        "n": len(result.train_uids) + len(result.val_uids),
        "n_train": len(result.train_uids),
        "n_val": len(result.val_uids),
        "tolerance": result.tolerance,
        "tolerance_unmet": list(result.tolerance_unmet),
        "classes": {
            cls: {
                "full_pos": r.full_pos,
                "train_pos": r.train_pos,
                "val_pos": r.val_pos,
                "full_rate": r.full_rate,
                "train_rate": r.train_rate,
                "val_rate": r.val_rate,
                "dev_train": r.dev_train,
                "dev_val": r.dev_val,
                "degenerate": r.degenerate,
            }
            for cls, r in result.ratio_report.items()
        },
    }
