import json

import pytest

from soar.archive import ArchiveWriter, read_archive, records_to_attempt_counts
from soar.errors import CorruptArchive
from soar.search import Attempt

from conftest import make_candidate, ok

G = [[1]]


def _attempts():
    good = make_candidate(
        "t:s00000", train_outcomes=[ok(G), ok(G)], test_outcomes=[ok(G)], train_accuracy=1.0
    )
    child = make_candidate(
        "t:i0r00000",
        train_outcomes=[ok(G), ok(G)],
        test_outcomes=[ok(G)],
        train_accuracy=0.5,
        parent="t:s00000",
    )
    return [
        Attempt("sample", None, good),
        Attempt("sample", None, None, raw_text="no code", parse_failure_reason="no_code_block"),
        Attempt("refine", 0, child, parent_id="t:s00000"),
    ]


def _write(path, attempts, start=0):
    with ArchiveWriter(path, start_record_id=start, clock=lambda: 0.0) as writer:
        for attempt in attempts:
            writer.append_attempt(attempt, "t", iteration=0)


def test_round_trip(tmp_path):
    path = tmp_path / "archive.jsonl"
    attempts = _attempts()
    _write(path, attempts)
    records = read_archive(path)
    assert [r.record_id for r in records] == [0, 1, 2]
    assert records[0].candidate == attempts[0].candidate
    assert records[1].parse_failure and records[1].raw_text == "no code"
    assert records[2].parent_id == "t:s00000"
    assert records[2].island == 0
    assert records[2].candidate.program.provenance.kind == "refined"


def test_append_continues_ids(tmp_path):
    path = tmp_path / "archive.jsonl"
    _write(path, _attempts())
    _write(path, _attempts()[:1], start=3)
    assert [r.record_id for r in read_archive(path)] == [0, 1, 2, 3]


def test_checksum_tamper_detected(tmp_path):
    path = tmp_path / "archive.jsonl"
    _write(path, _attempts())
    lines = path.read_text().splitlines()
    envelope = json.loads(lines[1])
    envelope["record"]["task_id"] = "tampered"
    lines[1] = json.dumps(envelope, sort_keys=True)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(CorruptArchive, match="checksum"):
        read_archive(path)


def test_truncated_final_line_names_offset(tmp_path):
    path = tmp_path / "archive.jsonl"
    _write(path, _attempts())
    blob = path.read_text()
    keep = blob.splitlines(keepends=True)
    offset = len((keep[0] + keep[1]).encode("utf-8"))
    path.write_text(keep[0] + keep[1] + keep[2][:-20])
    with pytest.raises(CorruptArchive, match=f"offset {offset}"):
        read_archive(path)


def test_out_of_order_ids_detected(tmp_path):
    path = tmp_path / "archive.jsonl"
    _write(path, _attempts()[:1])
    _write(path, _attempts()[:1], start=0)  # duplicate id 0
    with pytest.raises(CorruptArchive, match="out of order"):
        read_archive(path)


def test_attempt_counts(tmp_path):
    path = tmp_path / "archive.jsonl"
    _write(path, _attempts())
    counts = records_to_attempt_counts(read_archive(path))
    assert counts == {"t": {"sample": 2, "refine": 1}}
