"""End-to-end dataset build: ingest, PA filter, match, label, queue.

Stages run in a fixed order and hand results to each other through plain
files in the output directory, so every intermediate is auditable and each
stage is runnable alone. Outputs are written atomically (temp name, then
rename); a failing stage moves its partial files under failed/ and aborts.
The manifest is written last, only after all counts reconcile.
"""

from __future__ import annotations

import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .errors import CxrPipeError, InvariantViolation, StageFailure
from .his import (
    ReportRecord,
    filter_chest_reports,
    load_whitelist,
    parse_session_file,
    report_to_dict,
)
from .labeling import (
    KeywordConfig,
    LabelVector,
    default_config,
    label_csv_text,
    label_description,
)
from .matching import CONFLICT, MATCHED, match_all
from .pacs import (
    StudyRecord,
    ViewScorerClient,
    filter_pa,
    parse_manifest_file,
    score_views,
    study_to_dict,
)
from .reviewqueue import QueueStore, ReviewItem, conflict_item, residual_item
from .timestamps import format_instant

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("cxrpipe.pipeline")

REPORTS_FILE = "reports.jsonl"
STUDIES_FILE = "studies_pa.jsonl"
MATCHES_FILE = "matches.jsonl"
LABELS_FILE = "labels.csv"
MANIFEST_FILE = "manifest.json"


class ConfigError(CxrPipeError):
    """A config field is missing, mistyped, or out of range; carries the field path."""

    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}")
        self.field = field_path


@dataclass(frozen=True)
class PipelineConfig:
    his_dir: Path
    pacs_manifest: Path
    whitelist: Path
    out_dir: Path
    queue_log: Path
    keyword_config: Path | None = None
    scorer_endpoint: str | None = None
    pa_threshold: float = 0.5
    match_window_hours: int = 24
    split_ratio: float = 0.7
    split_seed: int = 0
    split_tolerance: float = 0.01
    bootstrap_replicates: int = 3000
    bootstrap_seed: int = 0

    def snapshot(self) -> dict:
        """JSON-ready copy of the effective settings for the run manifest."""
        return {
            key: str(value) if isinstance(value, Path) else value
            for key, value in self.__dict__.items()
        }


def _typed(table: dict, key: str, kind, field_path: str, default):
    if key not in table:
        if default is ...:
            raise ConfigError(field_path, "required field is missing")
        return default
    value = table.pop(key)
    # bool passes isinstance(int) checks; it is never a valid setting here
    if isinstance(value, bool) or not isinstance(value, kind):
        kind_name = kind.__name__ if isinstance(kind, type) else "number"
        raise ConfigError(field_path, f"expected {kind_name}, got {type(value).__name__}")
    return value


def _reject_unknown(table: dict, prefix: str) -> None:
    for key in table:
        raise ConfigError(f"{prefix}{key}", "unknown field")


def validate_config(path: str | Path) -> PipelineConfig:
    """Parse and range-check a run config; relative paths resolve beside the file."""
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError("config", f"unreadable: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("config", f"not valid TOML: {exc}") from exc

    base = path.parent
    paths = raw.pop("paths", None)
    if not isinstance(paths, dict):
        raise ConfigError("paths", "required table is missing")

    def _path(key: str, default=...) -> Path | None:
        value = _typed(paths, key, str, f"paths.{key}", default)
        return None if value is None else (base / value).resolve()

    his_dir = _path("his_dir")
    pacs_manifest = _path("pacs_manifest")
    whitelist = _path("whitelist")
    out_dir = _path("out_dir")
    keyword_config = _path("keyword_config", None)
    queue_log = _path("queue_log", None)
    _reject_unknown(paths, "paths.")
    if queue_log is None:
        queue_log = out_dir / "queue.jsonl"

    if not his_dir.is_dir():
        raise ConfigError("paths.his_dir", f"not a directory: {his_dir}")
    for field_name, file_path in (
        ("paths.pacs_manifest", pacs_manifest),
        ("paths.whitelist", whitelist),
        ("paths.keyword_config", keyword_config),
    ):
        if file_path is not None and not file_path.is_file():
            raise ConfigError(field_name, f"not a file: {file_path}")

    pa_threshold = float(_typed(raw, "pa_threshold", (int, float), "pa_threshold", 0.5))
    if not 0.0 <= pa_threshold <= 1.0:
        raise ConfigError("pa_threshold", f"must be within [0, 1], got {pa_threshold}")
    window = _typed(raw, "match_window_hours", int, "match_window_hours", 24)
    if window < 1:
        raise ConfigError("match_window_hours", f"must be at least 1, got {window}")
    scorer_endpoint = _typed(raw, "scorer_endpoint", str, "scorer_endpoint", None)

    split = raw.pop("split", {})
    ratio = float(_typed(split, "ratio", (int, float), "split.ratio", 0.7))
    if not 0.0 < ratio < 1.0:
        raise ConfigError("split.ratio", f"must be within (0, 1), got {ratio}")
    split_seed = _typed(split, "seed", int, "split.seed", 0)
    tolerance = float(_typed(split, "tolerance", (int, float), "split.tolerance", 0.01))
    if tolerance <= 0.0:
        raise ConfigError("split.tolerance", f"must be positive, got {tolerance}")
    _reject_unknown(split, "split.")

    bootstrap = raw.pop("bootstrap", {})
    replicates = _typed(bootstrap, "replicates", int, "bootstrap.replicates", 3000)
    if replicates < 1:
        raise ConfigError("bootstrap.replicates", f"must be at least 1, got {replicates}")
    bootstrap_seed = _typed(bootstrap, "seed", int, "bootstrap.seed", 0)
    _reject_unknown(bootstrap, "bootstrap.")
    _reject_unknown(raw, "")

    return PipelineConfig(
        his_dir=his_dir,
        pacs_manifest=pacs_manifest,
        whitelist=whitelist,
        out_dir=out_dir,
        queue_log=queue_log,
        keyword_config=keyword_config,
        scorer_endpoint=scorer_endpoint,
        pa_threshold=pa_threshold,
        match_window_hours=window,
        split_ratio=ratio,
        split_seed=split_seed,
        split_tolerance=tolerance,
        bootstrap_replicates=replicates,
        bootstrap_seed=bootstrap_seed,
    )


@dataclass
class StageRun:
    counts: dict[str, int]
    seconds: float


@dataclass
class RunManifest:
    version: str
    config: dict
    stages: dict[str, StageRun] = field(default_factory=dict)

    def check_conservation(self) -> None:
        """Every kept study must be accounted for exactly once downstream."""
        pacs = self.stages["ingest-pacs"].counts
        match = self.stages["match"].counts
        label = self.stages["label"].counts
        routed = match["matched"] + match["unmatched"] + match["conflicts"]
        if pacs["pa_kept"] != routed:
            raise InvariantViolation(
                f"pa_kept={pacs['pa_kept']} but match outcomes cover {routed}"
            )
        handled = label["auto_labeled"] + label["queued_residual"]
        if match["matched"] != handled:
            raise InvariantViolation(
                f"matched={match['matched']} but label stage handled {handled}"
            )

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "config": self.config,
            "stages": {
                name: {"counts": run.counts, "seconds": run.seconds}
                for name, run in self.stages.items()
            },
        }


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _jsonl(rows: list[dict]) -> str:
    return "".join(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n" for row in rows)


def _event(stage: str, event: str, **fields) -> None:
    parts = [f"stage={stage}", f"event={event}"]
    parts += [f"{key}={value}" for key, value in fields.items()]
    log.info("%s", " ".join(parts))


# -- stage bodies -----------------------------------------------------------
# Each takes the config (plus upstream outputs), writes its artifact into
# out_dir, and returns (counts, output). The CLI can invoke them one at a
# time; run_pipeline chains them with timing and failure handling.

def stage_ingest_his(config: PipelineConfig) -> tuple[dict, list[ReportRecord]]:
    session_count = 0
    reports: list[ReportRecord] = []
    for xml_path in sorted(config.his_dir.glob("*.xml")):
        _, session_reports = parse_session_file(xml_path)
        session_count += 1
        reports.extend(session_reports)
    whitelist = load_whitelist(config.whitelist)
    chest = filter_chest_reports(reports, whitelist)
    _atomic_write_text(config.out_dir / REPORTS_FILE, _jsonl([report_to_dict(r) for r in chest]))
    counts = {"sessions": session_count, "reports": len(reports), "chest_reports": len(chest)}
    return counts, chest


def stage_ingest_pacs(config: PipelineConfig) -> tuple[dict, list[StudyRecord]]:
    studies = parse_manifest_file(config.pacs_manifest)
    if config.scorer_endpoint is not None:
        outcome = score_views(studies, ViewScorerClient(config.scorer_endpoint))
        if outcome.failures:
            raise outcome.failures[0]
        studies = outcome.studies
    kept, ignored = filter_pa(studies, config.pa_threshold)
    _atomic_write_text(config.out_dir / STUDIES_FILE, _jsonl([study_to_dict(s) for s in kept]))
    counts = {"studies": len(studies), "pa_kept": len(kept), "pa_ignored": len(ignored)}
    return counts, kept


def stage_match(
    config: PipelineConfig, studies: list[StudyRecord], reports: list[ReportRecord]
) -> tuple[dict, list[dict]]:
    table = match_all(studies, reports, config.match_window_hours)
    by_id = {report.report_id: report for report in reports}
    counts = {"matched": 0, "unmatched": 0, "conflicts": 0}
    rows: list[dict] = []
    for outcome in table.outcomes:
        if outcome.status == MATCHED:
            counts["matched"] += 1
            rows.append(
                {
                    "study_uid": outcome.study_uid,
                    "status": outcome.status,
                    "report_id": outcome.report_id,
                    "description": by_id[outcome.report_id].description,
                }
            )
        elif outcome.status == CONFLICT:
            counts["conflicts"] += 1
            rows.append(
                {
                    "study_uid": outcome.study_uid,
                    "status": outcome.status,
                    "candidates": [
                        {
                            "report_id": rid,
                            "report_time": format_instant(by_id[rid].report_time),
                            "description": by_id[rid].description,
                        }
                        for rid in outcome.candidate_ids
                    ],
                }
            )
        else:
            counts["unmatched"] += 1
            rows.append({"study_uid": outcome.study_uid, "status": outcome.status})
    _atomic_write_text(config.out_dir / MATCHES_FILE, _jsonl(rows))
    return counts, rows


def read_match_rows(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def load_keyword_config(config: PipelineConfig) -> KeywordConfig:
    if config.keyword_config is not None:
        return KeywordConfig.from_toml(config.keyword_config)
    return default_config()


def stage_label(config: PipelineConfig, match_rows: list[dict]) -> tuple[dict, list[ReviewItem]]:
    keyword_config = load_keyword_config(config)
    labeled: list[tuple[str, LabelVector]] = []
    items: list[ReviewItem] = []
    counts = {"auto_labeled": 0, "queued_residual": 0, "queued_conflict": 0}
    for row in match_rows:
        if row["status"] == MATCHED:
            result = label_description(row["description"], keyword_config)
            if result.needs_review:
                counts["queued_residual"] += 1
                items.append(residual_item(row["study_uid"], row["description"], row["report_id"]))
            else:
                counts["auto_labeled"] += 1
                labeled.append((row["study_uid"], result.labels))
        elif row["status"] == CONFLICT:
            counts["queued_conflict"] += 1
            items.append(conflict_item(row["study_uid"], row["candidates"]))
    _atomic_write_text(config.out_dir / LABELS_FILE, label_csv_text(labeled))
    return counts, items


def stage_queue(config: PipelineConfig, items: list[ReviewItem]) -> tuple[dict, None]:
    with QueueStore(config.queue_log) as store:
        known_before = len(store.items)
        for item in items:
            store.enqueue(item)
        stats = store.stats()
        appended = len(store.items) - known_before
    counts = {"queued": len(items), "appended": appended, **stats}
    return counts, None


def _preserve_partials(out_dir: Path) -> None:
    """Move half-written temp files under failed/ so nothing masquerades as done."""
    partials = list(out_dir.glob("*.tmp"))
    if not partials:
        return
    failed_dir = out_dir / "failed"
    failed_dir.mkdir(exist_ok=True)
    for tmp in partials:
        os.replace(tmp, failed_dir / tmp.name[: -len(".tmp")])


def run_pipeline(config: PipelineConfig) -> RunManifest:
    """Execute all five stages; returns the manifest written to out_dir."""
    config.out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(version=__version__, config=config.snapshot())

    def _stage(name, body, *args):
        _event(name, "start")
        started = time.perf_counter()
        try:
            counts, output = body(config, *args)
        except Exception as exc:
            _preserve_partials(config.out_dir)
            _event(name, "failed", error=type(exc).__name__)
            raise StageFailure(name, exc) from exc
        manifest.stages[name] = StageRun(counts=counts, seconds=round(time.perf_counter() - started, 6))
        _event(name, "done", **counts)
        return output

    chest = _stage("ingest-his", stage_ingest_his)
    kept = _stage("ingest-pacs", stage_ingest_pacs)
    rows = _stage("match", stage_match, kept, chest)
    items = _stage("label", stage_label, rows)
    _stage("queue", stage_queue, items)

    manifest.check_conservation()
    _atomic_write_text(
        config.out_dir / MANIFEST_FILE,
        json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n",
    )
    _event("pipeline", "done", out_dir=config.out_dir)
    return manifest
