"""Instant parsing shared by the ingest modules.

All timestamps crossing a file boundary are ISO-8601 with an explicit UTC
offset. Naive timestamps are rejected: the matching window arithmetic must
never depend on a host timezone. Internally everything is normalized to UTC.
"""

from __future__ import annotations

from datetime import datetime, timezone


def parse_instant(text: str) -> datetime:
    """Parse an ISO-8601 instant with explicit offset into a UTC datetime.

    Raises ValueError for syntax errors and for naive (offset-less) values.
    """
    # Python 3.10 fromisoformat does not accept a trailing 'Z'
    raw = text.strip()
    if raw.endswith(("Z", "z")):
        raw = raw[:-1] + "+00:00"
    dt = datetime.fromisoformat(raw)
    if dt.tzinfo is None:
        raise ValueError(f"timestamp lacks a UTC offset: {text!r}")
    return dt.astimezone(timezone.utc)


def format_instant(dt: datetime) -> str:
    """Render a UTC instant in the canonical form parse_instant accepts."""
    if dt.tzinfo is None:
        raise ValueError("refusing to format a naive datetime")
    return dt.astimezone(timezone.utc).isoformat()
