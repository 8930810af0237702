"""Parsing of HIS session XML exports.

Each export file holds one hospital session: a header identifying the
patient and visit window, plus zero or more service reports. Reports are
flattened into self-contained records (session header fields copied in) so
downstream stages never need the session context again.
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass
from datetime import datetime
from pathlib import Path
from typing import Iterable
from xml.etree import ElementTree as ET

from .errors import CxrPipeError
from .timestamps import format_instant, parse_instant


class MalformedXml(CxrPipeError):
    """Input is not well-formed UTF-8 XML."""


class SchemaViolation(CxrPipeError):
    """Well-formed XML that does not follow the session schema; carries the element path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class BadTimestamp(CxrPipeError):
    """A timestamp element that does not parse as an ISO-8601 instant with offset."""

    def __init__(self, path: str, value: str, cause: str):
        super().__init__(f"{path}: bad timestamp {value!r} ({cause})")
        self.path = path
        self.value = value


class EmptyWhitelist(CxrPipeError):
    """filter_chest_reports called with no service ids to keep."""


@dataclass(frozen=True)
class SessionRecord:
    session_id: str
    patient_id: str
    check_in_time: datetime
    check_out_time: datetime


@dataclass(frozen=True)
class ReportRecord:
    report_id: str
    session_id: str
    patient_id: str
    service_id: str
    report_time: datetime
    description: str
    check_in_time: datetime
    check_out_time: datetime


_DECL_ENCODING = re.compile(rb'<\?xml[^>]*encoding\s*=\s*["\']([^"\']+)["\']')


def _require_utf8(data: bytes) -> None:
    try:
        data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedXml(f"input is not valid UTF-8: {exc}") from None
    m = _DECL_ENCODING.search(data[:200])
    if m is not None:
        declared = m.group(1).decode("ascii", "replace").lower()
        if declared not in ("utf-8", "utf8"):
            raise MalformedXml(f"declared encoding {declared!r} is not UTF-8")


def _child_text(parent: ET.Element, name: str, path: str) -> str:
    el = parent.find(name)
    if el is None:
        raise SchemaViolation(f"{path}/{name}", "missing required element")
    return el.text or ""


def _required_id(parent: ET.Element, name: str, path: str) -> str:
    value = _child_text(parent, name, path).strip()
    if not value:
        raise SchemaViolation(f"{path}/{name}", "must be non-empty")
    return value


def _instant(parent: ET.Element, name: str, path: str) -> datetime:
    text = _child_text(parent, name, path)
    try:
        return parse_instant(text)
    except ValueError as exc:
        raise BadTimestamp(f"{path}/{name}", text, str(exc)) from None


def parse_session_bytes(data: bytes) -> tuple[SessionRecord, list[ReportRecord]]:
    """Parse one session export; returns the session and its reports in document order."""
    _require_utf8(data)
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise MalformedXml(f"XML syntax error: {exc}") from None
    if root.tag != "Session":
        raise SchemaViolation(root.tag, "expected root element <Session>")

    header = root.find("Header")
    if header is None:
        raise SchemaViolation("Session/Header", "missing required element")
    hpath = "Session/Header"
    session = SessionRecord(
        session_id=_required_id(header, "SessionId", hpath),
        patient_id=_required_id(header, "PatientId", hpath),
        check_in_time=_instant(header, "CheckInTime", hpath),
        check_out_time=_instant(header, "CheckOutTime", hpath),
    )
    if session.check_out_time < session.check_in_time:
        raise SchemaViolation(f"{hpath}/CheckOutTime", "check-out precedes check-in")

    reports_el = root.find("Reports")
    if reports_el is None:
        raise SchemaViolation("Session/Reports", "missing required element")
    reports: list[ReportRecord] = []
    for idx, rep in enumerate(reports_el.findall("Report")):
        rpath = f"Session/Reports/Report[{idx}]"
        description = _child_text(rep, "Description", rpath)
        if not description.strip():
            raise SchemaViolation(f"{rpath}/Description", "must be non-empty")
        reports.append(
            ReportRecord(
                report_id=f"{session.session_id}#{idx}",
                session_id=session.session_id,
                patient_id=session.patient_id,
                service_id=_required_id(rep, "ServiceId", rpath),
                report_time=_instant(rep, "ReportTime", rpath),
                description=description,
                check_in_time=session.check_in_time,
                check_out_time=session.check_out_time,
            )
        )
    return session, reports


def parse_session_file(path: str | Path) -> tuple[SessionRecord, list[ReportRecord]]:
    return parse_session_bytes(Path(path).read_bytes())


def serialize_session(session: SessionRecord, reports: Iterable[ReportRecord]) -> bytes:
    """Render a session back to schema XML (parse_session_bytes inverts this)."""
    root = ET.Element("Session")
    header = ET.SubElement(root, "Header")
    ET.SubElement(header, "SessionId").text = session.session_id
    ET.SubElement(header, "PatientId").text = session.patient_id
    ET.SubElement(header, "CheckInTime").text = format_instant(session.check_in_time)
    ET.SubElement(header, "CheckOutTime").text = format_instant(session.check_out_time)
    reports_el = ET.SubElement(root, "Reports")
    for rep in reports:
        rep_el = ET.SubElement(reports_el, "Report")
        ET.SubElement(rep_el, "ServiceId").text = rep.service_id
        ET.SubElement(rep_el, "ReportTime").text = format_instant(rep.report_time)
        ET.SubElement(rep_el, "Description").text = rep.description
    return ET.tostring(root, encoding="utf-8", xml_declaration=True)


def filter_chest_reports(reports: list[ReportRecord], whitelist: set[str]) -> list[ReportRecord]:
    """Keep only reports whose service_id is whitelisted, preserving order."""
    if not whitelist:
        raise EmptyWhitelist("service id whitelist is empty")
    return [r for r in reports if r.service_id in whitelist]


def load_whitelist(path: str | Path) -> set[str]:
    """Read service ids from a text file, one per line; blanks and # comments skipped."""
    ids: set[str] = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        entry = line.strip()
        if entry and not entry.startswith("#"):
            ids.add(entry)
    return ids


# JSONL wire form used by the CLI between the ingest and matching stages.

def report_to_dict(report: ReportRecord) -> dict:
    d = asdict(report)
    for key in ("report_time", "check_in_time", "check_out_time"):
        d[key] = format_instant(d[key])
    return d


def report_from_dict(d: dict) -> ReportRecord:
    return ReportRecord(
        report_id=d["report_id"],
        session_id=d["session_id"],
        patient_id=d["patient_id"],
        service_id=d["service_id"],
        report_time=parse_instant(d["report_time"]),
        description=d["description"],
        check_in_time=parse_instant(d["check_in_time"]),
        check_out_time=parse_instant(d["check_out_time"]),
    )


def write_reports_jsonl(reports: Iterable[ReportRecord], path: str | Path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rep in reports:
            fh.write(json.dumps(report_to_dict(rep), ensure_ascii=False, sort_keys=True) + "\n")
            count += 1
    return count


def read_reports_jsonl(path: str | Path) -> list[ReportRecord]:
    reports = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                reports.append(report_from_dict(json.loads(line)))
    return reports
