"""Command-line entry points.

One verb per pipeline stage plus `run` for the whole chain, and standalone
verbs for splitting, evaluation, external label mapping, QC sampling, and
the review server. Exit codes: 0 success, 1 usage, 2 data error, 3 stage
failure.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import __version__
from .chexpert import AS_NEGATIVE, AS_POSITIVE, map_file
from .errors import CxrPipeError, StageFailure
from .figures import render_metrics_figure, render_split_figure
from .his import read_reports_jsonl
from .labeling import read_label_csv
from .matching import MATCHED
from .metrics import evaluate_labeler, format_table, read_score_csv, report_to_dict
from .pacs import parse_manifest_file
from .pipeline import (
    LABELS_FILE,
    MANIFEST_FILE,
    MATCHES_FILE,
    REPORTS_FILE,
    STUDIES_FILE,
    PipelineConfig,
    read_match_rows,
    run_pipeline,
    stage_ingest_his,
    stage_ingest_pacs,
    stage_label,
    stage_match,
    stage_queue,
    validate_config,
)
from .reviewqueue import QueueStore, qc_sample
from .service import serve
from .splitting import split_report_dict, stratified_split

config_option = click.option(
    "--config",
    "config_path",
    type=click.Path(dir_okay=False),
    default=None,
    help="Run config TOML; paths inside resolve relative to it.",
)


def _load_config(config_path: str | None) -> PipelineConfig:
    if config_path is None:
        raise click.UsageError("--config is required for this command")
    return validate_config(config_path)


def _echo_counts(stage: str, counts: dict) -> None:
    click.echo(f"stage={stage} " + " ".join(f"{k}={v}" for k, v in counts.items()))


def _artifact(config: PipelineConfig, name: str, produced_by: str) -> Path:
    path = config.out_dir / name
    if not path.is_file():
        raise CxrPipeError(f"{path} not found; run `cxrpipe {produced_by}` first")
    return path


@click.group()
@click.version_option(__version__, prog_name="cxrpipe")
def cli():
    """Build labeled chest X-ray datasets from HIS/PACS exports."""


@cli.command("ingest-his")
@config_option
def ingest_his_cmd(config_path):
    """Parse session XML files and keep whitelisted chest reports."""
    config = _load_config(config_path)
    config.out_dir.mkdir(parents=True, exist_ok=True)
    counts, _ = stage_ingest_his(config)
    _echo_counts("ingest-his", counts)


@cli.command("ingest-pacs")
@config_option
def ingest_pacs_cmd(config_path):
    """Load the study manifest, score views if needed, and keep PA studies."""
    config = _load_config(config_path)
    config.out_dir.mkdir(parents=True, exist_ok=True)
    counts, _ = stage_ingest_pacs(config)
    _echo_counts("ingest-pacs", counts)


@cli.command("match")
@config_option
def match_cmd(config_path):
    """Pair PA studies with chest reports from the ingest artifacts."""
    config = _load_config(config_path)
    reports = read_reports_jsonl(_artifact(config, REPORTS_FILE, "ingest-his"))
    studies = parse_manifest_file(_artifact(config, STUDIES_FILE, "ingest-pacs"))
    counts, _ = stage_match(config, studies, reports)
    _echo_counts("match", counts)


@cli.command("label")
@config_option
def label_cmd(config_path):
    """Label matched descriptions and queue everything needing review."""
    config = _load_config(config_path)
    rows = read_match_rows(_artifact(config, MATCHES_FILE, "match"))
    label_counts, items = stage_label(config, rows)
    queue_counts, _ = stage_queue(config, items)
    _echo_counts("label", label_counts)
    _echo_counts("queue", queue_counts)


@cli.command("run")
@config_option
def run_cmd(config_path):
    """Run every stage in order and write the run manifest."""
    config = _load_config(config_path)
    manifest = run_pipeline(config)
    for name, stage_run in manifest.stages.items():
        _echo_counts(name, stage_run.counts)
    click.echo(f"manifest={config.out_dir / MANIFEST_FILE}")


@cli.command("review-serve")
@click.option("--queue", "queue_path", type=click.Path(dir_okay=False), default=None,
              help="Queue log; defaults to the config's queue_log.")
@click.option("--bind", default="127.0.0.1:8642", show_default=True, help="HOST:PORT to listen on.")
@click.option("--ui-dir", type=click.Path(file_okay=False, exists=True), default=None,
              help="Directory with a static review UI to serve at /.")
@config_option
def review_serve_cmd(queue_path, bind, ui_dir, config_path):
    """Serve the review queue API (and optional UI) until interrupted."""
    if queue_path is None:
        queue_path = _load_config(config_path).queue_log
    with QueueStore(queue_path) as store:
        stats = store.stats()
        click.echo(f"serving {queue_path} on {bind} pending={stats['pending']} resolved={stats['resolved']}")
        serve(store, bind=bind, ui_dir=ui_dir)


@cli.command("map-chexpert")
@click.argument("source", type=click.Path(exists=True, dir_okay=False))
@click.argument("dest", type=click.Path(dir_okay=False))
@click.option("--uncertain", type=click.Choice([AS_NEGATIVE, AS_POSITIVE]), default=AS_NEGATIVE,
              show_default=True, help="How uncertain (-1) observations are resolved.")
@config_option
def map_chexpert_cmd(source, dest, uncertain, config_path):
    """Convert a CheXpert-style CSV into the five-class label schema."""
    with open(dest, "w", encoding="utf-8", newline="") as out:
        count, warnings = map_file(source, out, uncertain_policy=uncertain)
    for warning in warnings:
        click.echo(f"warning: {warning}", err=True)
    click.echo(f"rows={count} warnings={len(warnings)} out={dest}")


@cli.command("split")
@click.option("--labels", "labels_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out-dir", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--ratio", type=float, default=None, help="Train fraction; default 0.7 or the config value.")
@click.option("--seed", type=int, default=None, help="Tie-break seed; default 0 or the config value.")
@click.option("--tolerance", type=float, default=None,
              help="Advisory per-class rate deviation bound; default 0.01 or the config value.")
@config_option
def split_cmd(labels_path, out_dir, ratio, seed, tolerance, config_path):
    """Split a label CSV into train/val keeping class rates balanced."""
    defaults = validate_config(config_path) if config_path is not None else None
    ratio = ratio if ratio is not None else (defaults.split_ratio if defaults else 0.7)
    seed = seed if seed is not None else (defaults.split_seed if defaults else 0)
    tolerance = tolerance if tolerance is not None else (defaults.split_tolerance if defaults else 0.01)

    labels = read_label_csv(labels_path)
    result = stratified_split(labels, ratio=ratio, seed=seed, tolerance=tolerance)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "train.txt").write_text("".join(uid + "\n" for uid in result.train_uids), encoding="utf-8")
    (out / "val.txt").write_text("".join(uid + "\n" for uid in result.val_uids), encoding="utf-8")
    (out / "split.json").write_text(
        json.dumps(split_report_dict(result), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    render_split_figure(result, out / "split.png")

    for cls in result.tolerance_unmet:
        click.echo(f"warning: {cls} rate deviation exceeds tolerance {tolerance}", err=True)
    click.echo(f"train={len(result.train_uids)} val={len(result.val_uids)} out={out}")


@cli.command("evaluate")
@click.option("--auto", "auto_path", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Labels produced by the pipeline.")
@click.option("--truth", "truth_path", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Reference labels for the same study UIDs.")
@click.option("--scores", "scores_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Optional per-class real-valued scores for AUC.")
@click.option("--out-dir", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--replicates", type=int, default=None,
              help="Bootstrap replicate count for F1 CIs; default off, or the config value.")
@click.option("--seed", type=int, default=None, help="Bootstrap seed; default 0 or the config value.")
@config_option
def evaluate_cmd(auto_path, truth_path, scores_path, out_dir, replicates, seed, config_path):
    """Score pipeline labels against a reference set; write tables and charts."""
    defaults = validate_config(config_path) if config_path is not None else None
    if replicates is None and defaults is not None:
        replicates = defaults.bootstrap_replicates
    seed = seed if seed is not None else (defaults.bootstrap_seed if defaults else 0)

    auto = read_label_csv(auto_path)
    truth = read_label_csv(truth_path)
    scores = read_score_csv(scores_path) if scores_path is not None else None
    report = evaluate_labeler(auto, truth, scores=scores, bootstrap_replicates=replicates, seed=seed)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(
        json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (out / "report.txt").write_text(format_table(report) + "\n", encoding="utf-8")
    render_metrics_figure(report, out / "metrics.png")
    click.echo(f"n={report.n} macro_f1={report.macro['f1']:.4f} out={out}")


@cli.command("qc-sample")
@click.option("--rate", type=float, default=0.05, show_default=True,
              help="Fraction of auto-labeled studies to audit.")
@click.option("--seed", type=int, default=0, show_default=True)
@config_option
def qc_sample_cmd(rate, seed, config_path):
    """Queue a random audit sample of the auto-labeled studies."""
    config = _load_config(config_path)
    labels = read_label_csv(_artifact(config, LABELS_FILE, "label"))
    match_rows = read_match_rows(_artifact(config, MATCHES_FILE, "match"))
    descriptions = {row["study_uid"]: row["description"] for row in match_rows if row["status"] == MATCHED}
    triples = [(uid, vec, descriptions.get(uid, "")) for uid, vec in labels]
    items = qc_sample(triples, rate=rate, seed=seed)
    with QueueStore(config.queue_log) as store:
        for item in items:
            store.enqueue(item)
        stats = store.stats()
    click.echo(f"sampled={len(items)} pending={stats['pending']} queue={config.queue_log}")


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except StageFailure as exc:
        click.echo(f"error: {exc}", err=True)
        return 3
    except CxrPipeError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
