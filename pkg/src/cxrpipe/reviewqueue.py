"""Persistent manual-review queue.

Items (residual descriptions, match conflicts, QC audit samples) live in an
append-only JSONL log. Item ids are content hashes of (kind, payload), so
re-enqueueing the same work unit is a no-op. Every mutation is flushed and
fsynced before it is acknowledged; the in-memory view is always the fold of
the log, and a torn final line from a crash is dropped on reload.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import random
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

from .errors import CxrPipeError, InvariantViolation
from .labeling import SOURCE_MANUAL, LabelVector
from .timestamps import format_instant, parse_instant

KIND_RESIDUAL = "ResidualDescription"
KIND_CONFLICT = "MatchConflict"
KIND_QC = "QcAudit"
_KINDS = (KIND_RESIDUAL, KIND_CONFLICT, KIND_QC)

PENDING = "pending"
RESOLVED = "resolved"

VERDICT_OK = "ok"
VERDICT_CORRECTED = "corrected"


class NotFound(CxrPipeError):
    """No item with the given id."""


class AlreadyResolved(CxrPipeError):
    """The item was resolved earlier; resolutions are immutable."""


class WrongKind(CxrPipeError):
    """Resolution type does not fit the item kind (e.g. labels on a conflict)."""


class StoreWriteFailed(CxrPipeError):
    """Appending to the log failed; the mutation was not acknowledged."""


class CorruptLog(CxrPipeError):
    """A non-final log line failed to parse or replay; carries the line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class EmptyInput(CxrPipeError):
    """qc_sample over zero rows."""


@dataclass(frozen=True)
class ReviewItem:
    item_id: str
    kind: str
    payload: dict
    created_at: datetime
    status: str = PENDING
    resolution: dict | None = None
    annotator: str | None = None
    resolved_at: datetime | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise InvariantViolation(f"unknown item kind: {self.kind!r}")
        if self.status not in (PENDING, RESOLVED):
            raise InvariantViolation(f"unknown status: {self.status!r}")
        if (self.status == RESOLVED) != (self.resolution is not None):
            raise InvariantViolation("resolution must be present exactly when resolved")
        if self.status == RESOLVED and not self.annotator:
            raise InvariantViolation("resolved items must carry an annotator")


def content_id(kind: str, payload: dict) -> str:
    canonical = json.dumps({"kind": kind, "payload": payload}, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def make_item(kind: str, payload: dict, created_at: datetime | None = None) -> ReviewItem:
    """Build a pending item whose id is the content hash of (kind, payload)."""
    return ReviewItem(
        item_id=content_id(kind, payload),
        kind=kind,
        payload=payload,
        created_at=created_at or datetime.now(timezone.utc),
    )


def item_to_dict(item: ReviewItem) -> dict:
    d = {
        "item_id": item.item_id,
        "kind": item.kind,
        "payload": item.payload,
        "created_at": format_instant(item.created_at),
        "status": item.status,
    }
    if item.status == RESOLVED:
        d["resolution"] = item.resolution
        d["annotator"] = item.annotator
        d["resolved_at"] = format_instant(item.resolved_at)
    return d


def item_from_dict(d: dict) -> ReviewItem:
    return ReviewItem(
        item_id=d["item_id"],
        kind=d["kind"],
        payload=d["payload"],
        created_at=parse_instant(d["created_at"]),
        status=d.get("status", PENDING),
        resolution=d.get("resolution"),
        annotator=d.get("annotator"),
        resolved_at=parse_instant(d["resolved_at"]) if d.get("resolved_at") else None,
    )


class QueueStore:
    """Append-only JSONL store with an in-memory index.

    Safe for one writer process; reads are served from memory. Every append
    is fsynced before the call returns.
    """

    def __init__(self, log_path: str | Path):
        self.log_path = Path(log_path)
        self.items: dict[str, ReviewItem] = {}
        self._fh = None
        good_bytes = self._replay()
        if self.log_path.exists() and self.log_path.stat().st_size > good_bytes:
            # torn final line from an interrupted write: drop it
            with open(self.log_path, "r+b") as fh:
                fh.truncate(good_bytes)

    def _replay(self) -> int:
        """Fold the log into memory; returns the byte length of the valid prefix."""
        if not self.log_path.exists():
            return 0
        good = 0
        with open(self.log_path, "rb") as fh:
            data = fh.read()
        lines = data.split(b"\n")
        # data ending with \n yields a trailing empty chunk; anything else is a tear
        for line_no, raw in enumerate(lines[:-1], start=1):
            try:
                record = json.loads(raw.decode("utf-8"))
                self._apply(record, line_no)
            except (ValueError, KeyError, InvariantViolation) as exc:
                if line_no == len(lines) - 1:
                    break  # torn final line, tolerated
                raise CorruptLog(line_no, f"unreadable record: {exc}") from None
            good += len(raw) + 1
        return good

    def _apply(self, record: dict, line_no: int) -> None:
        op = record["op"]
        if op == "enqueue":
            item = item_from_dict(record["item"])
            self.items[item.item_id] = item
        elif op == "resolve":
            item_id = record["item_id"]
            if item_id not in self.items:
                raise CorruptLog(line_no, f"resolve for unknown item {item_id!r}")
            self.items[item_id] = replace(
                self.items[item_id],
                status=RESOLVED,
                resolution=record["resolution"],
                annotator=record["annotator"],
                resolved_at=parse_instant(record["resolved_at"]),
            )
        else:
            raise CorruptLog(line_no, f"unknown op {op!r}")

    def _append(self, record: dict) -> None:
        try:
            if self._fh is None:
                self.log_path.parent.mkdir(parents=True, exist_ok=True)
                self._fh = open(self.log_path, "ab")
            self._fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True).encode("utf-8") + b"\n")
            self._fh.flush()
            os.fsync(self._fh.fileno())
        except OSError as exc:
            raise StoreWriteFailed(f"could not append to {self.log_path}: {exc}") from exc

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self) -> "QueueStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- queries ------------------------------------------------------------

    def get(self, item_id: str) -> ReviewItem:
        if item_id not in self.items:
            raise NotFound(f"no item {item_id!r}")
        return self.items[item_id]

    def list_items(self, status: str | None = None) -> list[ReviewItem]:
        """Items in newest-first (reverse insertion) order, optionally filtered."""
        out = list(self.items.values())
        if status is not None:
            out = [item for item in out if item.status == status]
        return out[::-1]

    def stats(self) -> dict[str, int]:
        pending = sum(1 for item in self.items.values() if item.status == PENDING)
        return {"pending": pending, "resolved": len(self.items) - pending}

    # -- mutations ----------------------------------------------------------

    def enqueue(self, item: ReviewItem) -> str:
        """Append a pending item; identical (kind, payload) is a no-op."""
        if item.status != PENDING:
            raise InvariantViolation("only pending items can be enqueued")
        if item.item_id != content_id(item.kind, item.payload):
            raise InvariantViolation("item_id does not match its content hash")
        if item.item_id in self.items:
            return item.item_id
        self._append({"op": "enqueue", "item": item_to_dict(item)})
        self.items[item.item_id] = item
        return item.item_id

    def _resolve(self, item_id: str, resolution: dict, annotator: str) -> ReviewItem:
        item = self.get(item_id)
        if item.status == RESOLVED:
            raise AlreadyResolved(f"item {item_id!r} is already resolved")
        if not annotator or not annotator.strip():
            raise InvariantViolation("annotator must be non-empty")
        resolved_at = datetime.now(timezone.utc)
        self._append(
            {
                "op": "resolve",
                "item_id": item_id,
                "resolution": resolution,
                "annotator": annotator,
                "resolved_at": format_instant(resolved_at),
            }
        )
        updated = replace(
            item,
            status=RESOLVED,
            resolution=resolution,
            annotator=annotator,
            resolved_at=resolved_at,
        )
        self.items[item_id] = updated
        return updated


def labels_payload(vec: LabelVector) -> dict:
    return {**vec.as_dict(), "source": vec.source}


def labels_from_payload(d: dict, source: str | None = None) -> LabelVector:
    return LabelVector(
        chest_wall=d["chest_wall"],
        pleura=d["pleura"],
        parenchyma=d["parenchyma"],
        cardio=d["cardio"],
        abnormal=d["abnormal"],
        source=source or d.get("source", SOURCE_MANUAL),
    )


def submit_labels(store: QueueStore, item_id: str, labels: LabelVector, annotator: str) -> ReviewItem:
    """Resolve a residual-description or QC item with a manual label vector."""
    item = store.get(item_id)
    if item.kind == KIND_CONFLICT:
        raise WrongKind("conflicts are resolved by choosing a report, not labels")
    manual = LabelVector(*labels.as_tuple(), source=SOURCE_MANUAL)
    resolution: dict = {"labels": labels_payload(manual)}
    if item.kind == KIND_QC:
        resolution["verdict"] = VERDICT_CORRECTED
    return store._resolve(item_id, resolution, annotator)


def submit_match(store: QueueStore, item_id: str, report_id: str, annotator: str) -> ReviewItem:
    """Resolve a match conflict by choosing one of the candidate reports."""
    item = store.get(item_id)
    if item.kind != KIND_CONFLICT:
        raise WrongKind(f"item {item_id!r} is a {item.kind}, not a conflict")
    candidates = [c["report_id"] for c in item.payload.get("candidates", [])]
    if report_id not in candidates:
        raise InvariantViolation(f"report {report_id!r} is not a candidate of this conflict")
    return store._resolve(item_id, {"report_id": report_id}, annotator)


def submit_audit_ok(store: QueueStore, item_id: str, annotator: str) -> ReviewItem:
    """Resolve a QC audit item confirming the automatic labels were correct."""
    item = store.get(item_id)
    if item.kind != KIND_QC:
        raise WrongKind(f"item {item_id!r} is a {item.kind}, not a QC audit")
    return store._resolve(item_id, {"verdict": VERDICT_OK}, annotator)


def qc_sample(
    labeled: Sequence[tuple[str, LabelVector, str]],
    rate: float = 0.05,
    seed: int = 0,
    created_at: datetime | None = None,
) -> list[ReviewItem]:
    """Draw ceil(rate·n) audit items uniformly without replacement.

    Membership is deterministic for a fixed seed and independent of input
    order (rows are canonicalized by study_uid before sampling).
    """
    if not labeled:
        raise EmptyInput("nothing to sample")
    if not 0.0 < rate <= 1.0:
        raise InvariantViolation(f"rate must be in (0, 1], got {rate}")
    rows = sorted(labeled, key=lambda row: row[0])
    n = len(rows)
    # rate·n can land a hair above an integer in floating point; nudge down
    k = math.ceil(rate * n - 1e-9)
    chosen = random.Random(seed).sample(range(n), k)
    items = []
    for index in sorted(chosen):
        uid, vec, description = rows[index]
        payload = {
            "study_uid": uid,
            "labels": labels_payload(vec),
            "description": description,
        }
        items.append(make_item(KIND_QC, payload, created_at=created_at))
    return items


def corrected_labels_overlay(store: QueueStore) -> list[tuple[str, LabelVector]]:
    """(study_uid, corrected labels) for every QC item resolved with corrections."""
    out = []
    for item in store.items.values():
        if item.kind != KIND_QC or item.status != RESOLVED:
            continue
        if item.resolution.get("verdict") != VERDICT_CORRECTED:
            continue
        out.append((item.payload["study_uid"], labels_from_payload(item.resolution["labels"])))
    return out


# Convenience constructors for the two pipeline-generated kinds.

def residual_item(study_uid: str, description: str, report_id: str | None = None) -> ReviewItem:
    payload = {"study_uid": study_uid, "description": description}
    if report_id is not None:
        payload["report_id"] = report_id
    return make_item(KIND_RESIDUAL, payload)


def conflict_item(study_uid: str, candidates: Iterable[dict]) -> ReviewItem:
    """candidates: dicts with report_id, report_time, description."""
    return make_item(KIND_CONFLICT, {"study_uid": study_uid, "candidates": list(candidates)})
