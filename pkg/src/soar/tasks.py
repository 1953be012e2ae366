"""ARC tasks: parsing, serialization, and guarded ground-truth access.

Ground-truth test outputs are only reachable through the ``test_outputs``
property so that reads can be observed (and forbidden in test-time mode).
Synthetic tasks produced by hindsight relabeling carry their own outputs,
which do not count as ground truth.
"""

from __future__ import annotations

import json
import warnings
from contextlib import contextmanager
from pathlib import Path

from .errors import MalformedDocument, TruthAccessViolation
from .grids import Grid

EXPECTED_TRAIN_RANGE = (2, 10)

_truth_observers: list["TruthReadCounter"] = []
_truth_firewall_active = False


class TruthReadCounter:
    """Counts ground-truth reads; installed via :func:`observe_truth_reads`."""

    def __init__(self):
        self.reads = 0
        self.task_ids: list[str] = []

    def record(self, task_id: str):
        self.reads += 1
        self.task_ids.append(task_id)


@contextmanager
def observe_truth_reads():
    """Yield a counter that records every ground-truth access in scope."""
    counter = TruthReadCounter()
    _truth_observers.append(counter)
    try:
        yield counter
    finally:
        _truth_observers.remove(counter)


@contextmanager
def forbid_truth_reads():
    """Raise :class:`TruthAccessViolation` on any ground-truth access in scope."""
    global _truth_firewall_active
    previous = _truth_firewall_active
    _truth_firewall_active = True
    try:
        yield
    finally:
        _truth_firewall_active = previous


class Task:
    """An ARC task: demonstration pairs plus test inputs (and optional truth)."""

    __slots__ = ("task_id", "train_pairs", "test_inputs", "_test_outputs", "synthetic")

    def __init__(
        self,
        task_id: str,
        train_pairs: tuple[tuple[Grid, Grid], ...],
        test_inputs: tuple[Grid, ...],
        test_outputs: tuple[Grid, ...] | None = None,
        synthetic: bool = False,
    ):
        if not train_pairs:
            raise MalformedDocument(f"task {task_id}: no train pairs")
        if not test_inputs:
            raise MalformedDocument(f"task {task_id}: no test inputs")
        if test_outputs is not None and len(test_outputs) != len(test_inputs):
            raise MalformedDocument(
                f"task {task_id}: {len(test_outputs)} test outputs for {len(test_inputs)} test inputs"
            )
        self.task_id = task_id
        self.train_pairs = tuple(train_pairs)
        self.test_inputs = tuple(test_inputs)
        self._test_outputs = tuple(test_outputs) if test_outputs is not None else None
        self.synthetic = synthetic

    @property
    def test_outputs(self) -> tuple[Grid, ...] | None:
        """Test-output grids. Reads of non-synthetic (ground) truth are observed."""
        if not self.synthetic:
            if _truth_firewall_active:
                raise TruthAccessViolation(
                    f"ground-truth read for task {self.task_id} in test-time mode"
                )
            for counter in _truth_observers:
                counter.record(self.task_id)
        return self._test_outputs

    @property
    def has_truth(self) -> bool:
        """Whether truth is present, without counting as a read."""
        return self._test_outputs is not None

    def __eq__(self, other) -> bool:
        if not isinstance(other, Task):
            return NotImplemented
        return (
            self.task_id == other.task_id
            and self.train_pairs == other.train_pairs
            and self.test_inputs == other.test_inputs
            and self._test_outputs == other._test_outputs
        )

    def __hash__(self):
        return hash((self.task_id, self.train_pairs, self.test_inputs))

    def __repr__(self):
        return (
            f"Task({self.task_id!r}, train={len(self.train_pairs)}, "
            f"test={len(self.test_inputs)}, truth={self._test_outputs is not None})"
        )


def _parse_grid(obj, where: str) -> Grid:
    if not isinstance(obj, list):
        raise MalformedDocument(f"{where}: grid must be a list of rows")
    return Grid.from_lists(obj)


def parse_task(document: str | dict, task_id: str = "task") -> Task:
    """Parse one task in the public ARC format.

    ``document`` is a JSON string or an already-decoded object with ``train``
    and ``test`` arrays of ``{input, output}`` grid records. Test outputs are
    kept when present. Warns (does not error) when the train-pair count falls
    outside the conventional 2..10 range so synthetic tasks stay representable.
    """
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise MalformedDocument(f"task {task_id}: invalid JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise MalformedDocument(f"task {task_id}: expected an object")
    if "train" not in document or "test" not in document:
        raise MalformedDocument(f"task {task_id}: missing 'train' or 'test'")

    train_pairs = []
    for i, pair in enumerate(document["train"]):
        if not isinstance(pair, dict) or "input" not in pair or "output" not in pair:
            raise MalformedDocument(f"task {task_id}: train[{i}] needs input and output")
        train_pairs.append(
            (
                _parse_grid(pair["input"], f"task {task_id}: train[{i}].input"),
                _parse_grid(pair["output"], f"task {task_id}: train[{i}].output"),
            )
        )
    if not train_pairs:
        raise MalformedDocument(f"task {task_id}: empty train array")

    lo, hi = EXPECTED_TRAIN_RANGE
    if not lo <= len(train_pairs) <= hi:
        warnings.warn(
            f"task {task_id}: {len(train_pairs)} train pairs outside the usual {lo}-{hi}",
            stacklevel=2,
        )

    test_inputs = []
    test_outputs = []
    for i, rec in enumerate(document["test"]):
        if not isinstance(rec, dict) or "input" not in rec:
            raise MalformedDocument(f"task {task_id}: test[{i}] needs an input")
        test_inputs.append(_parse_grid(rec["input"], f"task {task_id}: test[{i}].input"))
        if "output" in rec and rec["output"] is not None:
            test_outputs.append(_parse_grid(rec["output"], f"task {task_id}: test[{i}].output"))
    if not test_inputs:
        raise MalformedDocument(f"task {task_id}: empty test array")
    if test_outputs and len(test_outputs) != len(test_inputs):
        raise MalformedDocument(
            f"task {task_id}: outputs present for only {len(test_outputs)} of "
            f"{len(test_inputs)} test inputs"
        )

    return Task(
        task_id=task_id,
        train_pairs=tuple(train_pairs),
        test_inputs=tuple(test_inputs),
        test_outputs=tuple(test_outputs) if test_outputs else None,
    )


def serialize_task(task: Task, include_truth: bool = True) -> dict:
    """Inverse of :func:`parse_task` (dict form)."""
    doc: dict = {
        "train": [
            {"input": x.to_lists(), "output": y.to_lists()} for x, y in task.train_pairs
        ]
    }
    truth = task._test_outputs if include_truth else None
    test = []
    for i, x in enumerate(task.test_inputs):
        rec: dict = {"input": x.to_lists()}
        if truth is not None:
            rec["output"] = truth[i].to_lists()
        test.append(rec)
    doc["test"] = test
    return doc


def strip_truth(task: Task) -> Task:
    """A copy of the task without ground-truth test outputs."""
    return Task(
        task_id=task.task_id,
        train_pairs=task.train_pairs,
        test_inputs=task.test_inputs,
        test_outputs=None,
        synthetic=task.synthetic,
    )


def load_tasks(path: str | Path) -> list[Task]:
    """Load tasks from a file or directory.

    Accepts a directory of one-task files, a single one-task file (the file
    stem becomes the task id), or a single file mapping task ids to task
    objects. Tasks are returned sorted by task id.
    """
    path = Path(path)
    if path.is_dir():
        tasks = []
        for child in sorted(path.glob("*.json")):
            tasks.append(parse_task(child.read_text(), task_id=child.stem))
        if not tasks:
            raise MalformedDocument(f"no .json task files under {path}")
        return tasks
    try:
        document = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"{path}: invalid JSON: {exc}") from exc
    if isinstance(document, dict) and "train" in document and "test" in document:
        return [parse_task(document, task_id=path.stem)]
    if isinstance(document, dict):
        return [parse_task(doc, task_id=tid) for tid, doc in sorted(document.items())]
    raise MalformedDocument(f"{path}: unrecognized task file layout")
