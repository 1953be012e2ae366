"""Deterministic mock backends for desk-scale runs and the test suite.

The program bank pairs canonical transform sources with native callables so a
mock chat backend and the mock executor stay consistent: whatever the chat
mock emits, the executor can run. Everything is seeded, so full pipelines
replay byte-identically.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .chat import SamplingParams
from .executor import MockExecutor, MockTimeout
from .grids import Grid
from .prompts import ChatMessage
from .seeding import derive_seed
from .tasks import Task

GridLists = list[list[int]]


def _copy(grid: GridLists) -> GridLists:
    return [row[:] for row in grid]


def _identity(grid: GridLists) -> GridLists:
    return _copy(grid)


def _transpose(grid: GridLists) -> GridLists:
    return [list(row) for row in zip(*grid)]


def _rot90(grid: GridLists) -> GridLists:
    return [list(row) for row in zip(*grid[::-1])]


def _rot180(grid: GridLists) -> GridLists:
    return [row[::-1] for row in grid[::-1]]


def _hflip(grid: GridLists) -> GridLists:
    return [row[::-1] for row in grid]


def _vflip(grid: GridLists) -> GridLists:
    return [row[:] for row in grid[::-1]]


def _zero(grid: GridLists) -> GridLists:
    return [[0] * len(row) for row in grid]


def _increment(grid: GridLists) -> GridLists:
    return [[(c + 1) % 10 for c in row] for row in grid]


def _top_row(grid: GridLists) -> GridLists:
    return [grid[0][:]]


def _crash(grid: GridLists) -> GridLists:
    raise ValueError("mock failure")


def _hang(grid: GridLists) -> GridLists:
    raise MockTimeout()


def _oversize(grid: GridLists) -> GridLists:
    return [[0] for _ in range(31)]


@dataclass(frozen=True)
class BankProgram:
    name: str
    source_text: str
    fn: Callable[[GridLists], GridLists]
    clean: bool  # runs without error on any valid grid


def _src(body: str) -> str:
    return f"def transform(grid):\n{body}"


PROGRAM_BANK: tuple[BankProgram, ...] = (
    BankProgram("identity", _src("    return [row[:] for row in grid]"), _identity, True),
    BankProgram(
        "transpose", _src("    return [list(row) for row in zip(*grid)]"), _transpose, True
    ),
    BankProgram(
        "rot90", _src("    return [list(row) for row in zip(*grid[::-1])]"), _rot90, True
    ),
    BankProgram(
        "rot180", _src("    return [row[::-1] for row in grid[::-1]]"), _rot180, True
    ),
    BankProgram("hflip", _src("    return [row[::-1] for row in grid]"), _hflip, True),
    BankProgram("vflip", _src("    return [row[:] for row in grid[::-1]]"), _vflip, True),
    BankProgram("zero", _src("    return [[0] * len(row) for row in grid]"), _zero, True),
    BankProgram(
        "increment", _src("    return [[(c + 1) % 10 for c in row] for row in grid]"), _increment, True
    ),
    BankProgram("top_row", _src("    return [grid[0][:]]"), _top_row, True),
    BankProgram("crash", _src("    raise ValueError('mock failure')"), _crash, False),
    BankProgram("hang", _src("    while True:\n        pass"), _hang, False),
    BankProgram(
        "oversize", _src("    return [[0] for _ in range(31)]"), _oversize, False
    ),
)

SOLVABLE_NAMES = ("identity", "transpose", "rot90", "rot180", "hflip", "vflip", "zero", "increment")


def bank_program(name: str) -> BankProgram:
    for entry in PROGRAM_BANK:
        if entry.name == name:
            return entry
    raise KeyError(name)


def bank_executor() -> MockExecutor:
    return MockExecutor({entry.source_text: entry.fn for entry in PROGRAM_BANK})


class BankChatBackend:
    """Seeded chat mock emitting program-bank completions.

    Draws are keyed on ``params.seed`` alone, which the search derives from
    (run seed, task, phase, batch), so identical runs produce identical
    completions. A small fraction of completions is prose-only to exercise
    parse-failure paths.
    """

    def __init__(self, prose_rate: float = 0.05, salt: int = 0):
        self.prose_rate = prose_rate
        self.salt = salt

    def complete(self, messages: Sequence[ChatMessage], params: SamplingParams) -> list[str]:
        rng = np.random.default_rng(derive_seed(self.salt, params.seed))
        texts = []
        for _ in range(params.n_completions):
            if rng.random() < self.prose_rate:
                texts.append("I could not find a transformation rule for this task.")
                continue
            entry = PROGRAM_BANK[int(rng.integers(len(PROGRAM_BANK)))]
            texts.append(
                "Looking at the examples, the rule appears to be a fixed grid "
                f"manipulation.\n\n```python\n{entry.source_text}\n```"
            )
        return texts


class SingleProgramChatBackend:
    """Chat mock that always returns the same program (e.g. early-stop tests)."""

    def __init__(self, source_text: str):
        self.source_text = source_text

    def complete(self, messages: Sequence[ChatMessage], params: SamplingParams) -> list[str]:
        return [f"```python\n{self.source_text}\n```"] * params.n_completions


def make_fixture_tasks(count: int = 10, seed: int = 7, with_truth: bool = True) -> list[Task]:
    """Small solvable tasks: each applies one clean bank transform to 3x3 grids."""
    rng = np.random.default_rng(derive_seed("fixture-tasks", seed))
    tasks = []
    for i in range(count):
        entry = bank_program(SOLVABLE_NAMES[i % len(SOLVABLE_NAMES)])
        grids = [
            [[int(c) for c in row] for row in rng.integers(0, 10, size=(3, 3))]
            for _ in range(3)
        ]
        train_pairs = tuple(
            (Grid.from_lists(g), Grid.from_lists(entry.fn(g))) for g in grids[:2]
        )
        test_input = Grid.from_lists(grids[2])
        truth = (Grid.from_lists(entry.fn(grids[2])),) if with_truth else None
        tasks.append(
            Task(
                task_id=f"fix{i:02d}",
                train_pairs=train_pairs,
                test_inputs=(test_input,),
                test_outputs=truth,
            )
        )
    return tasks
