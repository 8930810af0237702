"""Linking PA studies to their radiology reports.

A report is a candidate for a study when the patient ids agree, the report
time lies within the matching window of the study time, and the study time
falls inside the report's session window. Duplicate candidates carrying the
same normalized description collapse onto one deterministic winner; genuinely
different descriptions become a conflict for human review.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import timedelta
from typing import Callable

from .errors import CxrPipeError, InvariantViolation
from .his import ReportRecord
from .labeling import normalize_text
from .pacs import StudyRecord

MATCHED = "matched"
CONFLICT = "conflict"
UNMATCHED = "unmatched"


class DuplicateKey(CxrPipeError):
    """Duplicate study_uid or report_id in a batch match input."""


@dataclass(frozen=True)
class MatchOutcome:
    study_uid: str
    status: str
    report_id: str | None = None
    candidate_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if self.status not in (MATCHED, CONFLICT, UNMATCHED):
            raise InvariantViolation(f"unknown match status: {self.status!r}")
        if (self.status == MATCHED) != (self.report_id is not None):
            raise InvariantViolation("report_id must be present exactly when matched")
        if (self.status == CONFLICT) != (len(self.candidate_ids) >= 2):
            raise InvariantViolation("conflict requires at least two candidate ids")


@dataclass
class MatchTable:
    outcomes: list[MatchOutcome] = field(default_factory=list)
    report_usage: dict[str, int] = field(default_factory=dict)


def match_candidates(
    study: StudyRecord, reports: list[ReportRecord], window_hours: int = 24
) -> list[ReportRecord]:
    """All reports satisfying the three match predicates, sorted (report_time, report_id).

    The time-window predicate is inclusive: a report exactly window_hours
    away is retained.
    """
    window = timedelta(hours=window_hours)
    out = [
        r
        for r in reports
        if r.patient_id == study.patient_id
        and abs(r.report_time - study.study_time) <= window
        and r.check_in_time <= study.study_time <= r.check_out_time
    ]
    out.sort(key=lambda r: (r.report_time, r.report_id))
    return out


def resolve(
    study: StudyRecord,
    candidates: list[ReportRecord],
    normalizer: Callable[[str], str] = normalize_text,
) -> MatchOutcome:
    """Collapse a candidate list into one outcome.

    Multiple candidates match only if their normalized descriptions agree,
    in which case the earliest (report_time, report_id) candidate wins.
    """
    if not candidates:
        return MatchOutcome(study_uid=study.study_uid, status=UNMATCHED)
    if len(candidates) == 1:
        return MatchOutcome(
            study_uid=study.study_uid, status=MATCHED, report_id=candidates[0].report_id
        )
    descriptions = {normalizer(c.description) for c in candidates}
    if len(descriptions) == 1:
        winner = min(candidates, key=lambda r: (r.report_time, r.report_id))
        return MatchOutcome(study_uid=study.study_uid, status=MATCHED, report_id=winner.report_id)
    return MatchOutcome(
        study_uid=study.study_uid,
        status=CONFLICT,
        candidate_ids=tuple(c.report_id for c in candidates),
    )


def match_all(
    studies: list[StudyRecord],
    reports: list[ReportRecord],
    window_hours: int = 24,
    normalizer: Callable[[str], str] = normalize_text,
) -> MatchTable:
    """Match every study; outcomes keep input study order."""
    seen_studies: set[str] = set()
    for s in studies:
        if s.study_uid in seen_studies:
            raise DuplicateKey(f"duplicate study_uid {s.study_uid!r}")
        seen_studies.add(s.study_uid)
    seen_reports: set[str] = set()
    by_patient: dict[str, list[ReportRecord]] = {}
    for r in reports:
        if r.report_id in seen_reports:
            raise DuplicateKey(f"duplicate report_id {r.report_id!r}")
        seen_reports.add(r.report_id)
        by_patient.setdefault(r.patient_id, []).append(r)

    table = MatchTable()
    for study in studies:
        candidates = match_candidates(study, by_patient.get(study.patient_id, []), window_hours)
        outcome = resolve(study, candidates, normalizer)
        table.outcomes.append(outcome)
        if outcome.status == MATCHED:
            table.report_usage[outcome.report_id] = table.report_usage.get(outcome.report_id, 0) + 1
    return table
