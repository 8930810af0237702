"""PACS study manifests and PA-view filtering.

Studies arrive as a JSONL manifest exported from the archive, one study per
line, optionally carrying a precomputed PA-view probability. Studies without
one can be scored through a small HTTP scorer service; the pipeline then
keeps only studies whose probability strictly exceeds the threshold.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from datetime import datetime
from pathlib import Path
from typing import IO, Iterable

import httpx

from .errors import CxrPipeError, InvariantViolation
from .timestamps import format_instant, parse_instant


class MalformedLine(CxrPipeError):
    """A manifest line that is not valid JSON or misses/mistypes a field."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class DuplicateStudyUid(CxrPipeError):
    """The same study_uid appeared twice; carries the second occurrence's line number."""

    def __init__(self, line_no: int, study_uid: str):
        super().__init__(f"line {line_no}: duplicate study_uid {study_uid!r}")
        self.line_no = line_no
        self.study_uid = study_uid


class UnscoredStudy(CxrPipeError):
    """filter_pa saw a study without a pa_probability."""

    def __init__(self, study_uid: str):
        super().__init__(f"study {study_uid!r} has no pa_probability")
        self.study_uid = study_uid


class ScorerUnavailable(CxrPipeError):
    """The scorer endpoint could not be reached at all."""


class ScorerBadResponse(CxrPipeError):
    """The scorer answered, but not with a usable probability for this study."""

    def __init__(self, study_uid: str, message: str):
        super().__init__(f"study {study_uid!r}: {message}")
        self.study_uid = study_uid


@dataclass(frozen=True)
class StudyRecord:
    study_uid: str
    patient_id: str
    study_time: datetime
    pa_probability: float | None
    image_ref: str

    def __post_init__(self):
        if self.pa_probability is not None and not 0.0 <= self.pa_probability <= 1.0:
            raise InvariantViolation(
                f"pa_probability must be in [0,1], got {self.pa_probability!r}"
            )


@dataclass(frozen=True)
class ViewScorerClient:
    """Connection settings for the PA-view scorer service."""

    endpoint: str
    timeout: float = 10.0
    max_workers: int = 4

    def __post_init__(self):
        if self.timeout <= 0:
            raise InvariantViolation("timeout must be positive")
        if self.max_workers < 1:
            raise InvariantViolation("max_workers must be at least 1")

    @property
    def score_url(self) -> str:
        return self.endpoint.rstrip("/") + "/score"


_REQUIRED_FIELDS = ("study_uid", "patient_id", "study_time", "image_ref")


def _study_from_obj(obj: dict, line_no: int) -> StudyRecord:
    for field in _REQUIRED_FIELDS:
        value = obj.get(field)
        if not isinstance(value, str) or not value.strip():
            raise MalformedLine(line_no, f"field {field!r} must be a non-empty string")
    prob = obj.get("pa_probability")
    if prob is not None:
        if isinstance(prob, bool) or not isinstance(prob, (int, float)):
            raise MalformedLine(line_no, "pa_probability must be a number or null")
        prob = float(prob)
        if not 0.0 <= prob <= 1.0:
            raise MalformedLine(line_no, f"pa_probability out of [0,1]: {prob}")
    try:
        study_time = parse_instant(obj["study_time"])
    except ValueError as exc:
        raise MalformedLine(line_no, f"bad study_time: {exc}") from None
    return StudyRecord(
        study_uid=obj["study_uid"],
        patient_id=obj["patient_id"],
        study_time=study_time,
        pa_probability=prob,
        image_ref=obj["image_ref"],
    )


def parse_study_manifest(stream: IO[str] | Iterable[str]) -> list[StudyRecord]:
    """Parse a JSONL manifest, preserving input order. Blank lines are skipped."""
    studies: list[StudyRecord] = []
    seen: dict[str, int] = {}
    for line_no, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedLine(line_no, f"invalid JSON: {exc}") from None
        if not isinstance(obj, dict):
            raise MalformedLine(line_no, "line must be a JSON object")
        record = _study_from_obj(obj, line_no)
        if record.study_uid in seen:
            raise DuplicateStudyUid(line_no, record.study_uid)
        seen[record.study_uid] = line_no
        studies.append(record)
    return studies


def parse_manifest_file(path: str | Path) -> list[StudyRecord]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_study_manifest(fh)


def study_to_dict(study: StudyRecord) -> dict:
    return {
        "study_uid": study.study_uid,
        "patient_id": study.patient_id,
        "study_time": format_instant(study.study_time),
        "pa_probability": study.pa_probability,
        "image_ref": study.image_ref,
    }


def write_study_manifest(studies: Iterable[StudyRecord], path: str | Path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for study in studies:
            fh.write(json.dumps(study_to_dict(study), ensure_ascii=False, sort_keys=True) + "\n")
            count += 1
    return count


@dataclass
class ScoreOutcome:
    """score_views result: the full study list plus per-study scoring failures."""

    studies: list[StudyRecord]
    failures: list[ScorerBadResponse]


def _score_one(http: httpx.Client, url: str, study: StudyRecord) -> StudyRecord | ScorerBadResponse:
    try:
        resp = http.post(url, json={"image_ref": study.image_ref})
    except httpx.HTTPError as exc:
        raise ScorerUnavailable(f"scorer request failed: {exc}") from None
    if resp.status_code != 200:
        return ScorerBadResponse(study.study_uid, f"HTTP {resp.status_code}")
    try:
        prob = resp.json()["pa_probability"]
    except (json.JSONDecodeError, KeyError, TypeError):
        return ScorerBadResponse(study.study_uid, "response lacks pa_probability")
    if isinstance(prob, bool) or not isinstance(prob, (int, float)) or not 0.0 <= prob <= 1.0:
        return ScorerBadResponse(study.study_uid, f"pa_probability out of range: {prob!r}")
    return replace(study, pa_probability=float(prob))


def score_views(
    studies: list[StudyRecord],
    client: ViewScorerClient,
    transport: httpx.BaseTransport | None = None,
) -> ScoreOutcome:
    """Fill pa_probability for unscored studies via the scorer service.

    Already-scored records pass through untouched and cost no request.
    Per-study bad responses leave the record unscored and are collected in
    the outcome; a transport-level failure raises ScorerUnavailable.
    Requests run on up to client.max_workers threads; the output order is
    the input order regardless of completion order.
    """
    todo = [(i, s) for i, s in enumerate(studies) if s.pa_probability is None]
    if not todo:
        return ScoreOutcome(studies=list(studies), failures=[])
    out = list(studies)
    failures: list[ScorerBadResponse] = []
    with httpx.Client(timeout=client.timeout, transport=transport) as http:
        with ThreadPoolExecutor(max_workers=client.max_workers) as pool:
            results = pool.map(
                lambda pair: (pair[0], _score_one(http, client.score_url, pair[1])), todo
            )
            for index, result in results:
                if isinstance(result, ScorerBadResponse):
                    failures.append(result)
                else:
                    out[index] = result
    return ScoreOutcome(studies=out, failures=failures)


def filter_pa(
    studies: list[StudyRecord], threshold: float = 0.5
) -> tuple[list[StudyRecord], list[StudyRecord]]:
    """Partition studies into (kept, ignored) by pa_probability strictly above threshold.

    A probability exactly equal to the threshold is ignored.
    """
    kept: list[StudyRecord] = []
    ignored: list[StudyRecord] = []
    for study in studies:
        if study.pa_probability is None:
            raise UnscoredStudy(study.study_uid)
        (kept if study.pa_probability > threshold else ignored).append(study)
    return kept, ignored
