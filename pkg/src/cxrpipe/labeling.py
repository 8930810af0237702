"""Rule-based labeling of Vietnamese radiology report descriptions.

A description is turned into five binary labels (chest_wall, pleura,
parenchyma, cardio, abnormal) in fixed stage order: normality-template
filtering first, then class-scoped keyword detection, then abnormality
interpolation; anything matching neither route is flagged for manual
review. Matching is substring containment over normalized text: no
tokenization, no negation model.
"""

from __future__ import annotations

import csv
import io
import sys
import unicodedata
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, TextIO

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import CxrPipeError, InvariantViolation

# Location classes in canonical order; "abnormal" is derived, never matched.
LOCATION_CLASSES = ("chest_wall", "pleura", "parenchyma", "cardio")
ALL_CLASSES = LOCATION_CLASSES + ("abnormal",)

# Bit-exact output schema for label CSV files.
LABEL_CSV_HEADER = ["study_uid", "chest_wall", "pleura", "parenchyma", "cardio", "abnormal", "source"]

SOURCE_TEMPLATE = "template"
SOURCE_KEYWORD = "keyword"
SOURCE_MANUAL = "manual"
SOURCE_MAPPED = "mapped"
_VALID_SOURCES = {SOURCE_TEMPLATE, SOURCE_KEYWORD, SOURCE_MANUAL, SOURCE_MAPPED}

REASON_NO_MATCH = "no_template_no_keyword"
REASON_MATCH_CONFLICT = "match_conflict"


class BadPattern(CxrPipeError):
    """Keyword pattern with unbalanced braces, empty alternatives, or nesting."""


class BadConfig(CxrPipeError):
    """Keyword config violating its invariants (empty entries, cross-class duplicates)."""


class BadLabelFile(CxrPipeError):
    """Label CSV with a wrong header or malformed rows."""


def normalize_text(text: str) -> str:
    """Canonicalize text for template/keyword matching.

    NFC composition, Unicode-aware lowercasing (Vietnamese diacritics are
    preserved), whitespace runs collapsed to single spaces, ends stripped.
    Idempotent: normalize_text(normalize_text(x)) == normalize_text(x).
    """
    s = unicodedata.normalize("NFC", text)
    s = s.lower()
    # lowercasing can decompose rare code points; recompose so byte equality holds
    s = unicodedata.normalize("NFC", s)
    return " ".join(s.split())


def expand_keyword_pattern(pattern: str) -> list[str]:
    """Expand `{a|b|...}` alternation groups into all concrete variants.

    Groups must not nest. Each variant is returned normalized.
    """
    variants = [""]
    i = 0
    n = len(pattern)
    while i < n:
        ch = pattern[i]
        if ch == "}":
            raise BadPattern(f"unbalanced '}}' in pattern: {pattern!r}")
        if ch != "{":
            variants = [v + ch for v in variants]
            i += 1
            continue
        end = pattern.find("}", i + 1)
        if end == -1:
            raise BadPattern(f"unbalanced '{{' in pattern: {pattern!r}")
        group = pattern[i + 1 : end]
        if "{" in group:
            raise BadPattern(f"nested alternation in pattern: {pattern!r}")
        alternatives = group.split("|")
        if any(alt.strip() == "" for alt in alternatives):
            raise BadPattern(f"empty alternative in pattern: {pattern!r}")
        variants = [v + alt for v in variants for alt in alternatives]
        i = end + 1
    return [normalize_text(v) for v in variants]


@dataclass(frozen=True)
class KeywordConfig:
    """Normality templates plus class-scoped abnormality keyword sets.

    Templates and keywords are stored normalized; keyword alternation
    patterns are already expanded to concrete variants.
    """

    normality_templates: tuple[str, ...]
    keywords: dict[str, tuple[str, ...]]
    other_abnormal: tuple[str, ...]
    version: str = ""

    def __post_init__(self):
        for t in self.normality_templates:
            if not t:
                raise BadConfig("empty normality template after normalization")
        for cls in LOCATION_CLASSES:
            if cls not in self.keywords:
                raise BadConfig(f"missing keyword class: {cls}")
            for kw in self.keywords[cls]:
                if not kw:
                    raise BadConfig(f"empty keyword in class {cls}")
        for kw in self.other_abnormal:
            if not kw:
                raise BadConfig("empty keyword in other_abnormal")
        seen: dict[str, str] = {}
        for cls in LOCATION_CLASSES:
            for kw in self.keywords[cls]:
                if kw in seen and seen[kw] != cls:
                    raise BadConfig(f"keyword {kw!r} appears in both {seen[kw]} and {cls}")
                seen[kw] = cls

    @classmethod
    def from_dict(cls, raw: dict) -> "KeywordConfig":
        """Build a config from parsed TOML data, expanding alternation patterns."""
        templates = tuple(normalize_text(t) for t in raw.get("normality_templates", []))
        kw_section = raw.get("keywords", {})
        keywords: dict[str, tuple[str, ...]] = {}
        for name in LOCATION_CLASSES:
            expanded: list[str] = []
            for pattern in kw_section.get(name, []):
                expanded.extend(expand_keyword_pattern(pattern))
            keywords[name] = tuple(expanded)
        other: list[str] = []
        for pattern in raw.get("other_abnormal", []):
            other.extend(expand_keyword_pattern(pattern))
        return cls(
            normality_templates=templates,
            keywords=keywords,
            other_abnormal=tuple(other),
            version=str(raw.get("version", "")),
        )

    @classmethod
    def from_toml(cls, path: str | Path) -> "KeywordConfig":
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
        return cls.from_dict(raw)


def default_config() -> KeywordConfig:
    """The shipped sample config: published example keywords plus placeholder templates."""
    data = resources.files("cxrpipe.data").joinpath("keywords.toml").read_bytes()
    return KeywordConfig.from_dict(tomllib.loads(data.decode("utf-8")))


@dataclass(frozen=True)
class LabelVector:
    """Five binary labels plus provenance.

    Invariants: abnormal is 1 whenever any location class is 1, and a
    template-sourced vector is all zeros.
    """

    chest_wall: int
    pleura: int
    parenchyma: int
    cardio: int
    abnormal: int
    source: str
    matched_evidence: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        values = self.as_tuple()
        if any(v not in (0, 1) for v in values):
            raise InvariantViolation(f"labels must be binary, got {values}")
        if self.source not in _VALID_SOURCES:
            raise InvariantViolation(f"unknown label source: {self.source!r}")
        if self.abnormal == 0 and any(values[:4]):
            raise InvariantViolation("abnormal must be 1 when a location class is 1")
        if self.source == SOURCE_TEMPLATE and any(values):
            raise InvariantViolation("template-sourced labels must be all zero")

    def as_tuple(self) -> tuple[int, int, int, int, int]:
        return (self.chest_wall, self.pleura, self.parenchyma, self.cardio, self.abnormal)

    def as_dict(self) -> dict[str, int]:
        return dict(zip(ALL_CLASSES, self.as_tuple()))


@dataclass(frozen=True)
class LabelResult:
    """Outcome of labeling one description: labels, or a review flag with reason."""

    labels: LabelVector | None = None
    needs_review: bool = False
    review_reason: str | None = None

    def __post_init__(self):
        if (self.labels is None) != self.needs_review:
            raise InvariantViolation("exactly one of labels/needs_review must be set")
        if self.needs_review and self.review_reason not in (REASON_NO_MATCH, REASON_MATCH_CONFLICT):
            raise InvariantViolation(f"bad review reason: {self.review_reason!r}")


def is_normal_template(description: str, config: KeywordConfig) -> bool:
    """True iff any normality template occurs as a substring of the normalized description."""
    text = normalize_text(description)
    return any(t in text for t in config.normality_templates)


def detect_keywords(
    description: str, config: KeywordConfig
) -> tuple[dict[str, int], int, list[tuple[str, str]]]:
    """Flag each location class whose keyword set hits the normalized description.

    Returns (per-class flags, other-abnormality flag, every (class, keyword) hit).
    """
    text = normalize_text(description)
    flags = {cls: 0 for cls in LOCATION_CLASSES}
    evidence: list[tuple[str, str]] = []
    for cls in LOCATION_CLASSES:
        for kw in config.keywords[cls]:
            if kw in text:
                flags[cls] = 1
                evidence.append((cls, kw))
    other_flag = 0
    for kw in config.other_abnormal:
        if kw in text:
            other_flag = 1
            evidence.append(("other", kw))
    return flags, other_flag, evidence


def interpolate_abnormal(flags: dict[str, int], other_flag: int) -> int:
    """Derive the abnormal label: OR of the four location flags and the other-abnormality flag."""
    if set(flags) != set(LOCATION_CLASSES):
        raise InvariantViolation(f"expected flags for {LOCATION_CLASSES}, got {sorted(flags)}")
    return 1 if other_flag or any(flags.values()) else 0


def label_description(description: str, config: KeywordConfig) -> LabelResult:
    """Label one description through the fixed stage order.

    Template filtering wins over keyword detection; descriptions matching
    neither are routed to manual review.
    """
    if is_normal_template(description, config):
        return LabelResult(labels=LabelVector(0, 0, 0, 0, 0, source=SOURCE_TEMPLATE))
    flags, other_flag, evidence = detect_keywords(description, config)
    if other_flag or any(flags.values()):
        return LabelResult(
            labels=LabelVector(
                chest_wall=flags["chest_wall"],
                pleura=flags["pleura"],
                parenchyma=flags["parenchyma"],
                cardio=flags["cardio"],
                abnormal=interpolate_abnormal(flags, other_flag),
                source=SOURCE_KEYWORD,
                matched_evidence=tuple(evidence),
            )
        )
    return LabelResult(needs_review=True, review_reason=REASON_NO_MATCH)


# ---------------------------------------------------------------------------
# Label CSV schema shared by the labeler, the CheXpert mapper, and the metrics.

def write_label_csv(rows: Iterable[tuple[str, LabelVector]], out: TextIO) -> int:
    """Write (study_uid, labels) rows in the bit-exact CSV schema. Returns row count."""
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(LABEL_CSV_HEADER)
    count = 0
    for uid, vec in rows:
        writer.writerow([uid, *vec.as_tuple(), vec.source])
        count += 1
    return count


def read_label_csv(source: TextIO | str | Path) -> list[tuple[str, LabelVector]]:
    """Read a label CSV back into (study_uid, LabelVector) rows, validating the schema."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8", newline="") as fh:
            return read_label_csv(fh)
    reader = csv.reader(source)
    header = next(reader, None)
    if header != LABEL_CSV_HEADER:
        raise BadLabelFile(f"bad label CSV header: {header!r}")
    rows: list[tuple[str, LabelVector]] = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(LABEL_CSV_HEADER):
            raise BadLabelFile(f"line {lineno}: expected {len(LABEL_CSV_HEADER)} fields, got {len(row)}")
        uid, *values, src = row
        try:
            bits = [int(v) for v in values]
        except ValueError as exc:
            raise BadLabelFile(f"line {lineno}: non-integer label value") from exc
        try:
            vec = LabelVector(*bits, source=src)
        except InvariantViolation as exc:
            raise BadLabelFile(f"line {lineno}: {exc}") from exc
        rows.append((uid, vec))
    return rows


def label_csv_text(rows: Iterable[tuple[str, LabelVector]]) -> str:
    buf = io.StringIO()
    write_label_csv(rows, buf)
    return buf.getvalue()
