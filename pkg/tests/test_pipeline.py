import json

import pytest

from cxrpipe.errors import InvariantViolation, StageFailure
from cxrpipe.labeling import LABEL_CSV_HEADER, read_label_csv
from cxrpipe.pipeline import (
    LABELS_FILE,
    MANIFEST_FILE,
    MATCHES_FILE,
    REPORTS_FILE,
    STUDIES_FILE,
    ConfigError,
    RunManifest,
    StageRun,
    run_pipeline,
    validate_config,
)
from cxrpipe.reviewqueue import KIND_CONFLICT, KIND_RESIDUAL, QueueStore

from helpers import (
    PIPELINE_EXPECTED_COUNTS,
    PIPELINE_RESIDUAL_TEXT,
    pipeline_fixture,
)


@pytest.fixture
def fixture_run(tmp_path):
    config_path, expected_labels = pipeline_fixture(tmp_path)
    return validate_config(config_path), expected_labels


class TestConfig:
    def _minimal(self, tmp_path, extra=""):
        (tmp_path / "his").mkdir(exist_ok=True)
        (tmp_path / "studies.jsonl").write_text("", encoding="utf-8")
        (tmp_path / "whitelist.txt").write_text("CXR-PA\n", encoding="utf-8")
        paths_table = (
            '[paths]\nhis_dir = "his"\npacs_manifest = "studies.jsonl"\n'
            'whitelist = "whitelist.txt"\nout_dir = "out"\n'
        )
        # top-level keys must precede any table in TOML
        body = paths_table + extra if extra.startswith("[") else extra + paths_table
        path = tmp_path / "run.toml"
        path.write_text(body, encoding="utf-8")
        return path

    def test_defaults_applied(self, tmp_path):
        config = validate_config(self._minimal(tmp_path))
        assert config.pa_threshold == 0.5
        assert config.match_window_hours == 24
        assert config.split_ratio == 0.7
        assert config.bootstrap_replicates == 3000
        assert config.queue_log == (tmp_path / "out" / "queue.jsonl").resolve()
        assert config.keyword_config is None

    def test_relative_paths_resolve_beside_file(self, tmp_path):
        config = validate_config(self._minimal(tmp_path))
        assert config.his_dir == (tmp_path / "his").resolve()
        assert config.pacs_manifest.is_file()

    @pytest.mark.parametrize(
        "extra, field",
        [
            ("pa_threshold = 1.5\n", "pa_threshold"),
            ("pa_threshold = true\n", "pa_threshold"),
            ("match_window_hours = 0\n", "match_window_hours"),
            ("match_window_hours = 2.5\n", "match_window_hours"),
            ("[split]\nratio = 1.0\n", "split.ratio"),
            ("[split]\ntolerance = 0.0\n", "split.tolerance"),
            ("[bootstrap]\nreplicates = 0\n", "bootstrap.replicates"),
            ("surprise = 1\n", "surprise"),
            ("[split]\nrato = 0.7\n", "split.rato"),
        ],
    )
    def test_range_and_typo_errors(self, tmp_path, extra, field):
        with pytest.raises(ConfigError) as err:
            validate_config(self._minimal(tmp_path, extra))
        assert err.value.field == field

    def test_missing_paths_table(self, tmp_path):
        path = tmp_path / "bare.toml"
        path.write_text("pa_threshold = 0.5\n", encoding="utf-8")
        with pytest.raises(ConfigError) as err:
            validate_config(path)
        assert err.value.field == "paths"

    def test_missing_input_file(self, tmp_path):
        config_path = self._minimal(tmp_path)
        (tmp_path / "studies.jsonl").unlink()
        with pytest.raises(ConfigError) as err:
            validate_config(config_path)
        assert err.value.field == "paths.pacs_manifest"

    def test_unreadable_and_invalid_toml(self, tmp_path):
        with pytest.raises(ConfigError):
            validate_config(tmp_path / "absent.toml")
        bad = tmp_path / "bad.toml"
        bad.write_text("paths = [unclosed", encoding="utf-8")
        with pytest.raises(ConfigError):
            validate_config(bad)


class TestRun:
    def test_manifest_counts_match_fixture(self, fixture_run):
        config, _ = fixture_run
        manifest = run_pipeline(config)
        got = {name: stage.counts for name, stage in manifest.stages.items()}
        assert got == PIPELINE_EXPECTED_COUNTS

    def test_artifacts_written(self, fixture_run):
        config, _ = fixture_run
        run_pipeline(config)
        for name in (REPORTS_FILE, STUDIES_FILE, MATCHES_FILE, LABELS_FILE, MANIFEST_FILE):
            assert (config.out_dir / name).is_file()
        on_disk = json.loads((config.out_dir / MANIFEST_FILE).read_text("utf-8"))
        assert on_disk["stages"]["match"]["counts"]["matched"] == 11
        assert all(stage["seconds"] >= 0 for stage in on_disk["stages"].values())

    def test_label_rows_as_planted(self, fixture_run):
        config, expected_labels = fixture_run
        run_pipeline(config)
        rows = read_label_csv(config.out_dir / LABELS_FILE)
        assert len(rows) == 10
        for uid, vec in rows:
            want_vec, want_source = expected_labels[uid]
            assert vec.as_tuple() == want_vec
            assert vec.source == want_source

    def test_queue_contents(self, fixture_run):
        config, _ = fixture_run
        run_pipeline(config)
        with QueueStore(config.queue_log) as store:
            kinds = sorted(item.kind for item in store.items.values())
            assert kinds == [KIND_CONFLICT, KIND_RESIDUAL]
            residual = next(i for i in store.items.values() if i.kind == KIND_RESIDUAL)
            assert residual.payload["description"] == PIPELINE_RESIDUAL_TEXT
            conflict = next(i for i in store.items.values() if i.kind == KIND_CONFLICT)
            assert [c["report_id"] for c in conflict.payload["candidates"]] == ["S012#0", "S012#1"]

    def test_rerun_is_byte_identical_and_queue_stable(self, fixture_run):
        config, _ = fixture_run
        run_pipeline(config)
        first_labels = (config.out_dir / LABELS_FILE).read_bytes()
        first_queue = config.queue_log.read_bytes()

        manifest = run_pipeline(config)
        assert (config.out_dir / LABELS_FILE).read_bytes() == first_labels
        assert config.queue_log.read_bytes() == first_queue
        assert manifest.stages["queue"].counts["appended"] == 0

    def test_empty_inputs_give_zero_counts(self, tmp_path):
        (tmp_path / "his").mkdir()
        (tmp_path / "studies.jsonl").write_text("", encoding="utf-8")
        (tmp_path / "whitelist.txt").write_text("CXR-PA\n", encoding="utf-8")
        config_path = tmp_path / "run.toml"
        config_path.write_text(
            '[paths]\nhis_dir = "his"\npacs_manifest = "studies.jsonl"\n'
            'whitelist = "whitelist.txt"\nout_dir = "out"\n',
            encoding="utf-8",
        )
        manifest = run_pipeline(validate_config(config_path))
        flat = {k: v for stage in manifest.stages.values() for k, v in stage.counts.items()}
        assert all(v == 0 for v in flat.values())
        labels = (tmp_path / "out" / LABELS_FILE).read_text("utf-8")
        assert labels.strip() == ",".join(LABEL_CSV_HEADER)

    def test_broken_session_aborts_with_stage_name(self, fixture_run):
        config, _ = fixture_run
        (config.his_dir / "session_99.xml").write_bytes(b"<Session><Header>")
        with pytest.raises(StageFailure) as err:
            run_pipeline(config)
        assert err.value.stage == "ingest-his"
        assert not (config.out_dir / MANIFEST_FILE).exists()

    def test_failed_stage_preserves_partials(self, fixture_run):
        config, _ = fixture_run
        config.out_dir.mkdir(parents=True, exist_ok=True)
        # a half-written artifact from a previous crash must be quarantined,
        # not left to shadow real outputs
        (config.out_dir / "labels.csv.tmp").write_text("partial", encoding="utf-8")
        (config.his_dir / "session_99.xml").write_bytes(b"not xml at all")
        with pytest.raises(StageFailure):
            run_pipeline(config)
        preserved = config.out_dir / "failed" / "labels.csv"
        assert preserved.read_text("utf-8") == "partial"
        assert not (config.out_dir / "labels.csv.tmp").exists()

    def test_queue_stage_failure(self, fixture_run):
        config, _ = fixture_run
        config.queue_log.parent.mkdir(parents=True, exist_ok=True)
        config.queue_log.mkdir()  # a directory where the log file should be
        with pytest.raises(StageFailure) as err:
            run_pipeline(config)
        assert err.value.stage == "queue"
        # upstream artifacts survive for diagnosis
        assert (config.out_dir / LABELS_FILE).is_file()
        assert not (config.out_dir / MANIFEST_FILE).exists()


class TestManifestConservation:
    def _manifest(self, pa_kept, matched, unmatched, conflicts, auto, residual):
        manifest = RunManifest(version="t", config={})
        manifest.stages["ingest-pacs"] = StageRun({"studies": 0, "pa_kept": pa_kept, "pa_ignored": 0}, 0.0)
        manifest.stages["match"] = StageRun(
            {"matched": matched, "unmatched": unmatched, "conflicts": conflicts}, 0.0
        )
        manifest.stages["label"] = StageRun(
            {"auto_labeled": auto, "queued_residual": residual, "queued_conflict": conflicts}, 0.0
        )
        return manifest

    def test_consistent_counts_pass(self):
        self._manifest(12, 11, 0, 1, 10, 1).check_conservation()

    def test_lost_study_detected(self):
        with pytest.raises(InvariantViolation):
            self._manifest(13, 11, 0, 1, 10, 1).check_conservation()

    def test_lost_matched_report_detected(self):
        with pytest.raises(InvariantViolation):
            self._manifest(12, 11, 0, 1, 10, 0).check_conservation()
