"""Collapsing CheXpert-style 14-observation rows into the five-class schema.

Each positive observation contributes a fixed set of location classes, every
positive except "No Finding" marks the study abnormal, and the row's final
labels are the OR over contributions. Uncertain values are resolved first by
a selectable policy; blanks count as negative.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, TextIO

from .errors import CxrPipeError
from .labeling import LABEL_CSV_HEADER, SOURCE_MAPPED, LabelVector

POSITIVE = "positive"
NEGATIVE = "negative"
UNCERTAIN = "uncertain"
BLANK = "blank"
_VALUES = (POSITIVE, NEGATIVE, UNCERTAIN, BLANK)

AS_NEGATIVE = "as-negative"
AS_POSITIVE = "as-positive"

OBSERVATIONS = (
    "No Finding",
    "Enlarged Cardiomediastinum",
    "Cardiomegaly",
    "Lung Lesion",
    "Lung Opacity",
    "Edema",
    "Consolidation",
    "Pneumonia",
    "Atelectasis",
    "Pneumothorax",
    "Pleural Effusion",
    "Pleural Other",
    "Fracture",
    "Support Devices",
)

# observation -> location classes it turns on ("Support Devices" and
# "No Finding" map to no location; abnormal is handled separately)
LOCATION_MAP: dict[str, tuple[str, ...]] = {
    "No Finding": (),
    "Enlarged Cardiomediastinum": ("cardio",),
    "Cardiomegaly": ("cardio",),
    "Lung Lesion": ("parenchyma",),
    "Lung Opacity": ("parenchyma",),
    "Edema": ("parenchyma",),
    "Consolidation": ("parenchyma",),
    "Pneumonia": ("parenchyma",),
    "Atelectasis": ("parenchyma",),
    "Pneumothorax": ("pleura",),
    "Pleural Effusion": ("pleura",),
    "Pleural Other": ("pleura",),
    "Fracture": ("chest_wall",),
    "Support Devices": (),
}


class UnknownObservation(CxrPipeError):
    """A row carries an observation name outside the 14-name schema."""


class MissingObservation(CxrPipeError):
    """A row lacks one of the 14 observation names."""


class HeaderMismatch(CxrPipeError):
    """Input CSV header does not contain the 14 observation columns."""


class BadValue(CxrPipeError):
    """A cell that is not one of {1.0, 0.0, -1.0, blank}; carries row and column."""

    def __init__(self, row: int, column: str, value: str):
        super().__init__(f"row {row}, column {column!r}: bad value {value!r}")
        self.row = row
        self.column = column
        self.value = value


class BadPolicy(CxrPipeError):
    """Unknown uncertain-value policy name."""


@dataclass(frozen=True)
class ChexpertRow:
    identifier: str
    observations: dict[str, str]

    def __post_init__(self):
        for name in self.observations:
            if name not in LOCATION_MAP:
                raise UnknownObservation(f"unknown observation {name!r}")
        for name in OBSERVATIONS:
            if name not in self.observations:
                raise MissingObservation(f"missing observation {name!r}")
        for name, value in self.observations.items():
            if value not in _VALUES:
                raise BadValue(0, name, value)


def map_row(row: ChexpertRow, uncertain_policy: str = AS_NEGATIVE) -> LabelVector:
    """Collapse one 14-observation row into the five-class label vector."""
    if uncertain_policy not in (AS_NEGATIVE, AS_POSITIVE):
        raise BadPolicy(f"unknown uncertain policy {uncertain_policy!r}")
    flags = {"chest_wall": 0, "pleura": 0, "parenchyma": 0, "cardio": 0}
    abnormal = 0
    for name in OBSERVATIONS:
        value = row.observations[name]
        if value == UNCERTAIN:
            value = POSITIVE if uncertain_policy == AS_POSITIVE else NEGATIVE
        if value != POSITIVE:
            continue
        for cls in LOCATION_MAP[name]:
            flags[cls] = 1
        if name != "No Finding":
            abnormal = 1
    return LabelVector(
        chest_wall=flags["chest_wall"],
        pleura=flags["pleura"],
        parenchyma=flags["parenchyma"],
        cardio=flags["cardio"],
        abnormal=abnormal,
        source=SOURCE_MAPPED,
    )


def no_finding_conflict(row: ChexpertRow, uncertain_policy: str = AS_NEGATIVE) -> bool:
    """True when No Finding is positive alongside another positive observation."""
    def effective(name: str) -> str:
        value = row.observations[name]
        if value == UNCERTAIN:
            return POSITIVE if uncertain_policy == AS_POSITIVE else NEGATIVE
        return value

    if effective("No Finding") != POSITIVE:
        return False
    return any(effective(name) == POSITIVE for name in OBSERVATIONS if name != "No Finding")


_CELL_VALUES = {
    "1.0": POSITIVE,
    "1": POSITIVE,
    "0.0": NEGATIVE,
    "0": NEGATIVE,
    "-1.0": UNCERTAIN,
    "-1": UNCERTAIN,
    "": BLANK,
}


def parse_chexpert_csv(source: TextIO | str | Path) -> Iterator[tuple[int, ChexpertRow]]:
    """Yield (row number, row) from a CheXpert-style CSV.

    The identifier is the first non-observation column; extra non-observation
    columns are ignored. Columns are located by name, so order is free.
    """
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8", newline="") as fh:
            yield from parse_chexpert_csv(fh)
            return
    reader = csv.reader(source)
    header = next(reader, None)
    if header is None:
        raise HeaderMismatch("empty input")
    missing = [name for name in OBSERVATIONS if name not in header]
    if missing:
        raise HeaderMismatch(f"header lacks observation columns: {missing}")
    id_candidates = [i for i, name in enumerate(header) if name not in OBSERVATIONS]
    if not id_candidates:
        raise HeaderMismatch("header has no identifier column")
    id_col = id_candidates[0]
    col_of = {name: header.index(name) for name in OBSERVATIONS}
    for row_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise BadValue(row_no, "<row>", f"{len(row)} fields, expected {len(header)}")
        observations = {}
        for name in OBSERVATIONS:
            cell = row[col_of[name]].strip()
            if cell not in _CELL_VALUES:
                raise BadValue(row_no, name, cell)
            observations[name] = _CELL_VALUES[cell]
        yield row_no, ChexpertRow(identifier=row[id_col], observations=observations)


def map_file(
    source: TextIO | str | Path,
    out: TextIO,
    uncertain_policy: str = AS_NEGATIVE,
) -> tuple[int, list[str]]:
    """Map a CheXpert CSV to the five-class label CSV, preserving row order.

    Returns (rows written, warnings). Rows where a positive No Finding
    coexists with another positive observation are mapped by OR semantics
    (the finding wins) and reported as warnings.
    """
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(LABEL_CSV_HEADER)
    count = 0
    warnings: list[str] = []
    for row_no, row in parse_chexpert_csv(source):
        vec = map_row(row, uncertain_policy)
        if no_finding_conflict(row, uncertain_policy):
            warnings.append(
                f"row {row_no} ({row.identifier}): No Finding positive alongside findings; findings win"
            )
        writer.writerow([row.identifier, *vec.as_tuple(), vec.source])
        count += 1
    return count, warnings
