"""Append-only search archive with per-line checksums.

One JSONL line per LLM attempt. Each line carries a sha256 of its canonical
record payload and a strictly increasing record id, so torn writes and
reordering are detected on read and resume can trust the attempt counters it
derives.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator

from .errors import CorruptArchive
from .grids import Grid
from .programs import Candidate, CandidateEvaluation, Origin, Outcome, Program, Provenance
from .search import Attempt


def _outcome_to_dict(outcome: Outcome) -> dict:
    entry: dict = {"status": outcome.status}
    if outcome.grid is not None:
        entry["grid"] = outcome.grid.to_lists()
    if outcome.message is not None:
        entry["message"] = outcome.message
    return entry


def _outcome_from_dict(entry: dict) -> Outcome:
    grid = Grid.from_lists(entry["grid"]) if "grid" in entry else None
    return Outcome(status=entry["status"], grid=grid, message=entry.get("message"))


def candidate_to_dict(candidate: Candidate) -> dict:
    program = candidate.program
    evaluation = candidate.evaluation
    return {
        "program": {
            "program_id": program.program_id,
            "source_text": program.source_text,
            "provenance": {"kind": program.provenance.kind, "parent_id": program.provenance.parent_id},
            "origin": {
                "iteration": program.origin.iteration,
                "model_tag": program.origin.model_tag,
                "seed": program.origin.seed,
                "island": program.origin.island,
            },
        },
        "evaluation": {
            "train_outcomes": [_outcome_to_dict(o) for o in evaluation.train_outcomes],
            "test_outcomes": [_outcome_to_dict(o) for o in evaluation.test_outcomes],
            "train_accuracy": evaluation.train_accuracy,
        },
    }


def candidate_from_dict(payload: dict) -> Candidate:
    prog = payload["program"]
    ev = payload["evaluation"]
    program = Program(
        program_id=prog["program_id"],
        source_text=prog["source_text"],
        provenance=Provenance(
            kind=prog["provenance"]["kind"], parent_id=prog["provenance"]["parent_id"]
        ),
        origin=Origin(
            iteration=prog["origin"]["iteration"],
            model_tag=prog["origin"]["model_tag"],
            seed=prog["origin"]["seed"],
            island=prog["origin"]["island"],
        ),
    )
    evaluation = CandidateEvaluation(
        program_id=program.program_id,
        train_outcomes=tuple(_outcome_from_dict(o) for o in ev["train_outcomes"]),
        test_outcomes=tuple(_outcome_from_dict(o) for o in ev["test_outcomes"]),
        train_accuracy=ev["train_accuracy"],
    )
    return Candidate(program, evaluation)


@dataclass(frozen=True)
class ArchiveRecord:
    record_id: int
    task_id: str
    iteration: int
    phase: str
    island: int | None
    parse_failure: bool
    candidate: Candidate | None
    raw_text: str | None
    parse_failure_reason: str | None
    parent_id: str | None
    ts: float

    def to_payload(self) -> dict:
        payload: dict = {
            "record_id": self.record_id,
            "task_id": self.task_id,
            "iteration": self.iteration,
            "phase": self.phase,
            "island": self.island,
            "parse_failure": self.parse_failure,
            "raw_text": self.raw_text,
            "parse_failure_reason": self.parse_failure_reason,
            "parent_id": self.parent_id,
            "ts": self.ts,
        }
        payload.update(
            candidate_to_dict(self.candidate)
            if self.candidate is not None
            else {"program": None, "evaluation": None}
        )
        return payload

    @classmethod
    def from_payload(cls, payload: dict) -> "ArchiveRecord":
        candidate = candidate_from_dict(payload) if payload.get("program") else None
        return cls(
            record_id=payload["record_id"],
            task_id=payload["task_id"],
            iteration=payload["iteration"],
            phase=payload["phase"],
            island=payload["island"],
            parse_failure=payload["parse_failure"],
            candidate=candidate,
            raw_text=payload.get("raw_text"),
            parse_failure_reason=payload.get("parse_failure_reason"),
            parent_id=payload.get("parent_id"),
            ts=payload["ts"],
        )


def _checksum(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class ArchiveWriter:
    """Single writer appending checksummed records with increasing ids."""

    def __init__(
        self,
        path: str | Path,
        start_record_id: int = 0,
        clock: Callable[[], float] | None = None,
    ):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._next_id = start_record_id
        self._clock = clock if clock is not None else time.time
        self._handle = open(self.path, "a", encoding="utf-8")

    def append_attempt(self, attempt: Attempt, task_id: str, iteration: int) -> ArchiveRecord:
        record = ArchiveRecord(
            record_id=self._next_id,
            task_id=task_id,
            iteration=iteration,
            phase=attempt.phase,
            island=attempt.island,
            parse_failure=attempt.parse_failure,
            candidate=attempt.candidate,
            raw_text=attempt.raw_text,
            parse_failure_reason=attempt.parse_failure_reason,
            parent_id=attempt.parent_id,
            ts=self._clock(),
        )
        self._next_id += 1
        payload = record.to_payload()
        line = json.dumps(
            {"record": payload, "checksum": _checksum(payload)}, sort_keys=True
        )
        self._handle.write(line + "\n")
        self._handle.flush()
        return record

    def close(self):
        self._handle.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def iter_archive(path: str | Path) -> Iterator[ArchiveRecord]:
    """Read and validate records; any framing or checksum defect raises.

    The error names the byte offset of the offending line so a truncated
    archive can be repaired deliberately rather than silently skipped.
    """
    path = Path(path)
    offset = 0
    last_id = -1
    with open(path, "r", encoding="utf-8") as handle:
        for raw in handle:
            line_offset = offset
            offset += len(raw.encode("utf-8"))
            if not raw.endswith("\n"):
                raise CorruptArchive(f"{path}: truncated record at byte offset {line_offset}")
            try:
                envelope = json.loads(raw)
                payload = envelope["record"]
                checksum = envelope["checksum"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CorruptArchive(
                    f"{path}: unreadable record at byte offset {line_offset}: {exc}"
                ) from exc
            if _checksum(payload) != checksum:
                raise CorruptArchive(f"{path}: checksum mismatch at byte offset {line_offset}")
            record = ArchiveRecord.from_payload(payload)
            if record.record_id <= last_id:
                raise CorruptArchive(
                    f"{path}: record id {record.record_id} out of order at byte offset {line_offset}"
                )
            last_id = record.record_id
            yield record


def read_archive(path: str | Path) -> list[ArchiveRecord]:
    return list(iter_archive(path))


def records_to_attempt_counts(records: list[ArchiveRecord]) -> dict[str, dict[str, int]]:
    """Per-task sample/refine attempt counters derived purely from records."""
    counts: dict[str, dict[str, int]] = {}
    for record in records:
        task_counts = counts.setdefault(record.task_id, {"sample": 0, "refine": 0})
        task_counts[record.phase] += 1
    return counts
