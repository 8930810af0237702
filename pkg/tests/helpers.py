"""Shared test utilities: synthetic corpora and records with known-correct
expected outputs.

The builders compose inputs from pieces they control, so the expected result
of every generated case is known by construction and serves as an independent
oracle for the module under test.
"""

from __future__ import annotations

import random
import string
import unicodedata
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

from cxrpipe.his import ReportRecord, SessionRecord, serialize_session
from cxrpipe.labeling import LOCATION_CLASSES, KeywordConfig, default_config
from cxrpipe.pacs import StudyRecord, write_study_manifest

# Neutral connective phrases; none contains a config keyword or template.
FILLERS = [
    "theo dõi thêm",
    "so với phim cũ không đổi",
    "đề nghị kết hợp lâm sàng",
    "kiểm tra lại sau hai tuần",
    "chụp ở tư thế đứng",
]

# Plausible rare-finding texts that match neither templates nor keywords;
# these must land in the manual review route.
REVIEW_ONLY = [
    "nghi ngờ khối u trung thất",
    "hình ảnh chưa xác định, cần hội chẩn",
    "đặt ống thông tĩnh mạch trung tâm",
    "theo dõi sau phẫu thuật ngày thứ ba",
]


def strip_diacritics(text: str) -> str:
    """Remove Vietnamese diacritics (including đ -> d); used to corrupt rows."""
    decomposed = unicodedata.normalize("NFD", text)
    kept = "".join(c for c in decomposed if not unicodedata.combining(c))
    return kept.replace("đ", "d").replace("Đ", "D")


def mangle_presentation(text: str, rng: random.Random) -> str:
    """Vary casing, whitespace, and Unicode form without changing content."""
    out = text
    if rng.random() < 0.5:
        out = "".join(c.upper() if rng.random() < 0.3 else c for c in out)
    if rng.random() < 0.3:
        out = out.replace(" ", "  ", 1)
    if rng.random() < 0.3:
        out = "  " + out + " "
    if rng.random() < 0.3:
        out = unicodedata.normalize("NFD", out)
    return out


@dataclass(frozen=True)
class CorpusRow:
    description: str
    # expected per-class flags including "abnormal", or None when the row
    # must be routed to manual review
    expected: dict[str, int] | None
    expected_source: str | None  # "template" / "keyword" / None


def synth_corpus(n: int, seed: int, config: KeywordConfig | None = None) -> list[CorpusRow]:
    """Build n labeled descriptions: ~30% template, ~60% keyword, ~10% review."""
    cfg = config or default_config()
    rng = random.Random(seed)
    rows: list[CorpusRow] = []
    zeros = {cls: 0 for cls in LOCATION_CLASSES} | {"abnormal": 0}
    for _ in range(n):
        roll = rng.random()
        if roll < 0.3:
            text = rng.choice(cfg.normality_templates)
            if rng.random() < 0.5:
                text = text + ". " + rng.choice(FILLERS)
            rows.append(CorpusRow(mangle_presentation(text, rng), dict(zeros), "template"))
        elif roll < 0.9:
            k = rng.randint(1, 3)
            classes = rng.sample(LOCATION_CLASSES, k)
            parts = [rng.choice(cfg.keywords[cls]) for cls in classes]
            expected = {cls: (1 if cls in classes else 0) for cls in LOCATION_CLASSES}
            if rng.random() < 0.15:
                parts.append(rng.choice(cfg.other_abnormal))
            expected["abnormal"] = 1
            rng.shuffle(parts)
            if rng.random() < 0.5:
                parts.insert(rng.randrange(len(parts) + 1), rng.choice(FILLERS))
            text = ", ".join(parts)
            rows.append(CorpusRow(mangle_presentation(text, rng), expected, "keyword"))
        else:
            text = rng.choice(REVIEW_ONLY)
            rows.append(CorpusRow(mangle_presentation(text, rng), None, None))
    return rows


# ---------------------------------------------------------------------------
# Session / report record generators.

_EPOCH = datetime(2020, 3, 1, tzinfo=timezone.utc)
_WORDS = ["phổi", "tim", "xét nghiệm", "chụp", "khám", "bụng", "đầu", "cổ"]


def rand_instant(rng: random.Random, spread_hours: float = 24 * 365) -> datetime:
    """Random aware instant; varied offsets prove normalization to UTC."""
    offset = timezone(timedelta(hours=rng.choice([-5, 0, 7, 9])))
    base = _EPOCH + timedelta(seconds=rng.randrange(int(spread_hours * 3600)))
    return base.astimezone(offset)


def rand_id(rng: random.Random, prefix: str) -> str:
    return prefix + "".join(rng.choices(string.ascii_uppercase + string.digits, k=8))


def synth_session(
    rng: random.Random,
    n_reports: int | None = None,
    service_pool: tuple[str, ...] = ("CXR", "CT", "LAB", "US"),
) -> tuple[SessionRecord, list[ReportRecord]]:
    """Random schema-valid session; report ids match the parser's synthesis rule."""
    check_in = rand_instant(rng)
    session = SessionRecord(
        session_id=rand_id(rng, "S"),
        patient_id=rand_id(rng, "P"),
        check_in_time=check_in,
        check_out_time=check_in + timedelta(minutes=rng.randrange(0, 600)),
    )
    if n_reports is None:
        n_reports = rng.randrange(0, 5)
    reports = []
    for idx in range(n_reports):
        description = " ".join(rng.choices(_WORDS, k=rng.randrange(2, 7)))
        reports.append(
            ReportRecord(
                report_id=f"{session.session_id}#{idx}",
                session_id=session.session_id,
                patient_id=session.patient_id,
                service_id=rng.choice(service_pool),
                report_time=session.check_in_time + timedelta(minutes=rng.randrange(0, 600)),
                description=description,
                check_in_time=session.check_in_time,
                check_out_time=session.check_out_time,
            )
        )
    return session, reports


# ---------------------------------------------------------------------------
# CheXpert-style rows.

# Independent statement of the lookup table: observation -> five-class tuple.
SINGLE_POSITIVE_EXPECTED = {
    "No Finding": (0, 0, 0, 0, 0),
    "Enlarged Cardiomediastinum": (0, 0, 0, 1, 1),
    "Cardiomegaly": (0, 0, 0, 1, 1),
    "Lung Lesion": (0, 0, 1, 0, 1),
    "Lung Opacity": (0, 0, 1, 0, 1),
    "Edema": (0, 0, 1, 0, 1),
    "Consolidation": (0, 0, 1, 0, 1),
    "Pneumonia": (0, 0, 1, 0, 1),
    "Atelectasis": (0, 0, 1, 0, 1),
    "Pneumothorax": (0, 1, 0, 0, 1),
    "Pleural Effusion": (0, 1, 0, 0, 1),
    "Pleural Other": (0, 1, 0, 0, 1),
    "Fracture": (1, 0, 0, 0, 1),
    "Support Devices": (0, 0, 0, 0, 1),
}


def rand_chexpert_row(rng: random.Random, identifier: str = "row"):
    from cxrpipe.chexpert import OBSERVATIONS, ChexpertRow

    values = ("positive", "negative", "uncertain", "blank")
    return ChexpertRow(
        identifier=identifier,
        observations={name: rng.choice(values) for name in OBSERVATIONS},
    )


# ---------------------------------------------------------------------------
# Metrics oracles and published-table fixtures.

# Printed evaluation counts and metrics for the five classes (n = 3001 each):
# class -> ((tp, fp, tn, fn), (precision, recall, f1))
TABLE3 = {
    "chest_wall": ((71, 0, 2930, 0), (1.0, 1.0, 1.0)),
    "pleura": ((67, 1, 2933, 0), (0.9853, 1.0, 0.9926)),
    "parenchyma": ((652, 1, 2347, 1), (0.9985, 0.9985, 0.9985)),
    "cardio": ((235, 0, 2766, 0), (1.0, 1.0, 1.0)),
    "abnormal": ((848, 0, 2153, 0), (1.0, 1.0, 1.0)),
}
TABLE3_MACRO_F1 = 0.99822


def table3_label_files():
    """Reconstruct a (auto, truth) label-row pair realizing every TABLE3 count.

    All positive activity is packed into the first 848 rows (the abnormal
    rows, where predicted and true abnormal agree), which keeps every row a
    valid label vector: the abnormal flag covers each location positive, and
    false-positive/negative location cells sit in rows that are abnormal via
    some other finding.
    """
    from cxrpipe.labeling import LabelVector

    n = 3001
    n_abnormal = 848
    pred_cols = {cls: [0] * n for cls in LOCATION_CLASSES}
    true_cols = {cls: [0] * n for cls in LOCATION_CLASSES}
    for cls in LOCATION_CLASSES:
        (tp, fp, tn, fn), _ = TABLE3[cls]
        for i in range(tp):  # tp block starts at row 0
            pred_cols[cls][i] = 1
            true_cols[cls][i] = 1
        for i in range(tp, tp + fn):  # then fn rows
            true_cols[cls][i] = 1
        for i in range(tp + fn, tp + fn + fp):  # then fp rows
            pred_cols[cls][i] = 1
        assert tp + fn + fp <= n_abnormal
        assert tn == n - tp - fn - fp
    auto_rows = []
    truth_rows = []
    for i in range(n):
        abnormal = 1 if i < n_abnormal else 0
        uid = f"1.2.{i}"
        auto_rows.append(
            (uid, LabelVector(*(pred_cols[c][i] for c in LOCATION_CLASSES), abnormal, source="keyword"))
        )
        truth_rows.append(
            (uid, LabelVector(*(true_cols[c][i] for c in LOCATION_CLASSES), abnormal, source="manual"))
        )
    return auto_rows, truth_rows


# Published dataset-wide positive rates for the five classes.
SPLIT_RATES = {
    "chest_wall": 0.0237,
    "pleura": 0.0222,
    "parenchyma": 0.2172,
    "cardio": 0.0783,
    "abnormal": 0.2823,
}


def synth_split_dataset(n: int, seed: int):
    """n label rows with exact per-class positive counts round(rate·n).

    Location positives are placed only on abnormal rows, so every row is a
    valid label vector and co-occurrence mirrors the real structure.
    """
    from cxrpipe.labeling import LabelVector

    rng = random.Random(seed)
    abn_rows = rng.sample(range(n), round(SPLIT_RATES["abnormal"] * n))
    cols = {cls: [0] * n for cls in LOCATION_CLASSES}
    for cls in LOCATION_CLASSES:
        for i in rng.sample(abn_rows, round(SPLIT_RATES[cls] * n)):
            cols[cls][i] = 1
    abnormal = [0] * n
    for i in abn_rows:
        abnormal[i] = 1
    return [
        (
            f"1.2.{i:06d}",
            LabelVector(*(cols[c][i] for c in LOCATION_CLASSES), abnormal[i], source="manual"),
        )
        for i in range(n)
    ]


def brute_force_auc(scores, truth) -> float:
    """O(n^2) concordant-pair count; ties count one half."""
    pos = [s for s, t in zip(scores, truth) if t == 1]
    neg = [s for s, t in zip(scores, truth) if t == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


def rand_label_vector(rng: random.Random, abnormal_extra_rate: float = 0.2):
    """Random valid label vector; sometimes abnormal without any location."""
    from cxrpipe.labeling import LabelVector

    bits = [1 if rng.random() < 0.25 else 0 for _ in LOCATION_CLASSES]
    abnormal = 1 if any(bits) or rng.random() < abnormal_extra_rate else 0
    return LabelVector(*bits, abnormal, source="manual")


# ---------------------------------------------------------------------------
# Matcher instances plus an independent brute-force reference implementation.


def synth_match_instance(
    rng: random.Random, n_studies: int = 20, n_reports: int = 30
) -> tuple[list[StudyRecord], list[ReportRecord]]:
    """Random matcher input with a healthy mix of matched/conflict/unmatched.

    Small description pools make duplicate and conflicting candidates common;
    some study times are pushed outside the window or the session on purpose.
    """
    patients = [rand_id(rng, "P") for _ in range(max(2, n_studies // 3))]
    descriptions = [f"kết quả chụp {k}" for k in range(3)]
    reports: list[ReportRecord] = []
    for i in range(n_reports):
        pid = rng.choice(patients)
        check_in = rand_instant(rng, spread_hours=24 * 30)
        check_out = check_in + timedelta(hours=rng.randrange(1, 72))
        report_time = check_in + timedelta(minutes=rng.randrange(-600, 4000))
        reports.append(
            ReportRecord(
                report_id=f"R{i:04d}",
                session_id=f"S{i:04d}",
                patient_id=pid,
                service_id="CXR",
                report_time=report_time,
                description=rng.choice(descriptions),
                check_in_time=check_in,
                check_out_time=check_out,
            )
        )
    studies: list[StudyRecord] = []
    for j in range(n_studies):
        pid = rng.choice(patients) if rng.random() < 0.9 else rand_id(rng, "PX")
        if reports and rng.random() < 0.85:
            own = [r for r in reports if r.patient_id == pid]
            anchor = rng.choice(own or reports)
            span = int((anchor.check_out_time - anchor.check_in_time).total_seconds() // 60)
            study_time = anchor.check_in_time + timedelta(minutes=rng.randrange(0, span + 1))
            roll = rng.random()
            if roll < 0.1:
                study_time = anchor.report_time - timedelta(hours=24)  # exact boundary
            elif roll < 0.25:
                study_time += timedelta(hours=rng.choice([-30, 25, 48]))
        else:
            study_time = rand_instant(rng, spread_hours=24 * 30)
        studies.append(
            StudyRecord(
                study_uid=f"1.2.{j}.{rng.randrange(10**6)}",
                patient_id=pid,
                study_time=study_time,
                pa_probability=round(rng.random(), 3),
                image_ref=f"img{j}.dcm",
            )
        )
    return studies, reports


def _oracle_normalize(text: str) -> str:
    return " ".join(unicodedata.normalize("NFC", text).lower().split())


def brute_force_candidates(study, reports, window_hours=24):
    out = []
    for r in reports:
        if r.patient_id != study.patient_id:
            continue
        if abs((r.report_time - study.study_time).total_seconds()) > window_hours * 3600:
            continue
        if not (r.check_in_time <= study.study_time and study.study_time <= r.check_out_time):
            continue
        out.append(r)
    return sorted(out, key=lambda r: (r.report_time, r.report_id))


def brute_force_match(studies, reports, window_hours=24):
    """Reference matcher: plain triple-predicate scan over every pair.

    Returns one (study_uid, status, report_id, candidate_ids) tuple per study.
    """
    results = []
    for study in studies:
        cands = brute_force_candidates(study, reports, window_hours)
        if not cands:
            results.append((study.study_uid, "unmatched", None, ()))
        elif len({_oracle_normalize(c.description) for c in cands}) == 1:
            winner = cands[0]
            results.append((study.study_uid, "matched", winner.report_id, ()))
        else:
            results.append(
                (study.study_uid, "conflict", None, tuple(c.report_id for c in cands))
            )
    return results


def synth_study(
    rng: random.Random,
    patient_id: str | None = None,
    scored: bool | None = None,
) -> StudyRecord:
    if scored is None:
        scored = rng.random() < 0.8
    return StudyRecord(
        study_uid="1.2." + ".".join(str(rng.randrange(10, 10**6)) for _ in range(3)),
        patient_id=patient_id or rand_id(rng, "P"),
        study_time=rand_instant(rng),
        pa_probability=round(rng.random(), 4) if scored else None,
        image_ref=f"archive/{rand_id(rng, 'IMG')}.dcm",
    )


# -- end-to-end fixture -------------------------------------------------------
# Twelve sessions and twelve studies with every outcome planted by hand:
# ten descriptions the labeler must resolve (five templates, five keyword
# texts), one residual that must queue, and one two-report conflict.

TZ_ICT = timezone(timedelta(hours=7))

PIPELINE_EXPECTED_COUNTS = {
    "ingest-his": {"sessions": 12, "reports": 14, "chest_reports": 13},
    "ingest-pacs": {"studies": 14, "pa_kept": 12, "pa_ignored": 2},
    "match": {"matched": 11, "unmatched": 0, "conflicts": 1},
    "label": {"auto_labeled": 10, "queued_residual": 1, "queued_conflict": 1},
    "queue": {"queued": 2, "appended": 2, "pending": 2, "resolved": 0},
}

PIPELINE_KEYWORD_ROWS = [
    ("gãy xương đòn phải, theo dõi thêm", (1, 0, 0, 0, 1)),
    ("dày màng phổi trái lan tỏa", (0, 1, 0, 0, 1)),
    ("dày thành phế quản hai bên", (0, 0, 1, 0, 1)),
    ("bóng tim lớn, hình tim trái to", (0, 0, 0, 1, 1)),
    ("liềm hơi dưới vòm hoành phải", (0, 0, 0, 0, 1)),
]

PIPELINE_RESIDUAL_TEXT = "tổn thương dạng nốt chưa rõ bản chất"
PIPELINE_CONFLICT_TEXTS = ("dày màng phổi trái", "tù góc sườn hoành phải")


def pipeline_fixture(root) -> tuple:
    """Write the corpus under root; returns (config path, expected labels).

    Expected labels map the ten auto-labelable study UIDs to
    ((chest_wall, pleura, parenchyma, cardio, abnormal), source).
    """
    cfg = default_config()
    his_dir = root / "his"
    his_dir.mkdir()
    base = datetime(2024, 3, 1, 8, 0, tzinfo=TZ_ICT)
    template_texts = list(cfg.normality_templates[:4])
    template_texts.append(f"kết luận: {cfg.normality_templates[4]}")

    studies = []
    expected_labels = {}
    for i in range(1, 13):
        sid, pid = f"S{i:03d}", f"BN{i:03d}"
        check_in = base + timedelta(days=i)
        check_out = check_in + timedelta(hours=6)
        session = SessionRecord(sid, pid, check_in, check_out)

        def rep(idx, service, text, offset_hours):
            return ReportRecord(
                report_id=f"{sid}#{idx}",
                session_id=sid,
                patient_id=pid,
                service_id=service,
                report_time=check_in + timedelta(hours=offset_hours),
                description=text,
                check_in_time=check_in,
                check_out_time=check_out,
            )

        uid = f"1.2.840.9{i:03d}"
        if i <= 5:
            reports = [rep(0, "CXR-PA", template_texts[i - 1], 1)]
            expected_labels[uid] = ((0, 0, 0, 0, 0), "template")
        elif i <= 10:
            text, vec = PIPELINE_KEYWORD_ROWS[i - 6]
            reports = [rep(0, "CXR-PA", text, 1)]
            expected_labels[uid] = (vec, "keyword")
        elif i == 11:
            reports = [rep(0, "CXR-PA", PIPELINE_RESIDUAL_TEXT, 1)]
        else:
            reports = [
                rep(0, "CXR-PA", PIPELINE_CONFLICT_TEXTS[0], 1),
                rep(1, "CXR-PA", PIPELINE_CONFLICT_TEXTS[1], 2),
            ]
        if i == 1:
            reports.append(rep(1, "US-ABD", "siêu âm ổ bụng bình thường", 2))
        (his_dir / f"session_{i:02d}.xml").write_bytes(serialize_session(session, reports))
        studies.append(
            StudyRecord(
                study_uid=uid,
                patient_id=pid,
                study_time=check_in + timedelta(minutes=90),
                pa_probability=0.9,
                image_ref=f"im/{uid}.dcm",
            )
        )

    # two non-PA studies the filter must drop: one clearly lateral, one at
    # exactly the threshold (kept only on strictly-greater)
    studies.append(
        StudyRecord(
            study_uid="1.2.840.8001",
            patient_id="BN001",
            study_time=base + timedelta(days=1, minutes=90),
            pa_probability=0.3,
            image_ref="im/lat.dcm",
        )
    )
    studies.append(
        StudyRecord(
            study_uid="1.2.840.8002",
            patient_id="BN002",
            study_time=base + timedelta(days=2, minutes=90),
            pa_probability=0.5,
            image_ref="im/ap.dcm",
        )
    )
    write_study_manifest(studies, root / "studies.jsonl")

    (root / "whitelist.txt").write_text("# chest radiography services\nCXR-PA\n", encoding="utf-8")
    (root / "run.toml").write_text(
        "\n".join(
            [
                'pa_threshold = 0.5',
                'match_window_hours = 24',
                '',
                '[paths]',
                'his_dir = "his"',
                'pacs_manifest = "studies.jsonl"',
                'whitelist = "whitelist.txt"',
                'out_dir = "out"',
                '',
                '[bootstrap]',
                'replicates = 50',
                '',
            ]
        ),
        encoding="utf-8",
    )
    return root / "run.toml", expected_labels
