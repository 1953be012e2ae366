"""Candidate programs and their per-pair execution outcomes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .errors import LengthMismatch, MalformedDocument
from .grids import Grid, grid_equal
from .tasks import Task

OK = "ok"
ERROR = "error"
TIMEOUT = "timeout"
INVALID = "invalid"


@dataclass(frozen=True)
class Outcome:
    """Result of running a program on one grid."""

    status: str
    grid: Grid | None = None
    message: str | None = None

    @classmethod
    def ok(cls, grid: Grid) -> "Outcome":
        return cls(OK, grid=grid)

    @classmethod
    def error(cls, message: str) -> "Outcome":
        return cls(ERROR, message=message)

    @classmethod
    def timeout(cls) -> "Outcome":
        return cls(TIMEOUT)

    @classmethod
    def invalid(cls, message: str) -> "Outcome":
        return cls(INVALID, message=message)

    @property
    def is_ok(self) -> bool:
        return self.status == OK


@dataclass(frozen=True)
class Provenance:
    """How a program entered the archive: fresh sample or refinement."""

    kind: str  # "sampled" | "refined"
    parent_id: str | None = None

    @classmethod
    def sampled(cls) -> "Provenance":
        return cls("sampled")

    @classmethod
    def refined(cls, parent_id: str) -> "Provenance":
        return cls("refined", parent_id=parent_id)


@dataclass(frozen=True)
class Origin:
    iteration: int
    model_tag: str
    seed: int
    island: int | None = None


@dataclass(frozen=True)
class Program:
    program_id: str
    source_text: str
    provenance: Provenance
    origin: Origin

    def __post_init__(self):
        if not self.source_text:
            raise MalformedDocument(f"program {self.program_id}: empty source")


@dataclass(frozen=True)
class CandidateEvaluation:
    program_id: str
    train_outcomes: tuple[Outcome, ...]
    test_outcomes: tuple[Outcome, ...]
    train_accuracy: float

    @property
    def train_perfect(self) -> bool:
        return self.train_accuracy == 1.0

    @property
    def all_ok(self) -> bool:
        return all(o.is_ok for o in self.train_outcomes) and all(
            o.is_ok for o in self.test_outcomes
        )

    @property
    def train_all_ok(self) -> bool:
        return all(o.is_ok for o in self.train_outcomes)

    @property
    def test_all_ok(self) -> bool:
        return all(o.is_ok for o in self.test_outcomes)


@dataclass(frozen=True)
class Candidate:
    """A program together with its evaluation on one task."""

    program: Program
    evaluation: CandidateEvaluation

    @property
    def program_id(self) -> str:
        return self.program.program_id


def compute_train_accuracy(task: Task, outcomes: Iterable[Outcome]) -> float:
    """Fraction of train pairs reproduced exactly; any non-ok outcome counts 0."""
    outcomes = tuple(outcomes)
    if len(outcomes) != len(task.train_pairs):
        raise LengthMismatch(
            f"{len(outcomes)} outcomes for {len(task.train_pairs)} train pairs"
        )
    hits = 0
    for (_, target), outcome in zip(task.train_pairs, outcomes):
        if outcome.is_ok and outcome.grid is not None and grid_equal(outcome.grid, target):
            hits += 1
    return hits / len(outcomes)


def test_truth_accuracy(task: Task, test_outcomes: tuple[Outcome, ...]) -> float:
    """Fraction of ground-truth test outputs reproduced exactly.

    Reads ground truth; callers must be in a mode where that is allowed.
    """
    truth = task.test_outputs
    if truth is None:
        from .errors import MissingTruth

        raise MissingTruth(f"task {task.task_id} has no test outputs")
    if len(test_outcomes) != len(truth):
        raise LengthMismatch(
            f"{len(test_outcomes)} test outcomes for {len(truth)} truths"
        )
    hits = 0
    for outcome, target in zip(test_outcomes, truth):
        if outcome.is_ok and outcome.grid is not None and grid_equal(outcome.grid, target):
            hits += 1
    return hits / len(truth)


def matches_truth(task: Task, test_outcomes: tuple[Outcome, ...]) -> bool:
    """True iff every test outcome is ok and equals the ground truth."""
    return test_truth_accuracy(task, test_outcomes) == 1.0
