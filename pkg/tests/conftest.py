import json
from pathlib import Path

import pytest

from soar.grids import Grid
from soar.programs import Candidate, CandidateEvaluation, Origin, Outcome, Program, Provenance
from soar.tasks import Task, parse_task

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"


def load_fixture_task(name: str, task_id: str) -> Task:
    return parse_task(json.loads((FIXTURES / name).read_text()), task_id=task_id)


def make_program(
    program_id: str,
    source: str = "def transform(grid):\n    return grid",
    parent: str | None = None,
    iteration: int = 0,
    island: int | None = None,
) -> Program:
    provenance = Provenance.refined(parent) if parent else Provenance.sampled()
    return Program(
        program_id=program_id,
        source_text=source,
        provenance=provenance,
        origin=Origin(iteration=iteration, model_tag="test", seed=0, island=island),
    )


def ok(rows) -> Outcome:
    return Outcome.ok(Grid.from_lists(rows))


def make_candidate(
    program_id: str,
    train_outcomes,
    test_outcomes,
    train_accuracy: float,
    source: str | None = None,
    parent: str | None = None,
) -> Candidate:
    program = make_program(
        program_id,
        source=source or f"def transform(grid):\n    return grid  # {program_id}",
        parent=parent,
    )
    evaluation = CandidateEvaluation(
        program_id=program_id,
        train_outcomes=tuple(train_outcomes),
        test_outcomes=tuple(test_outcomes),
        train_accuracy=train_accuracy,
    )
    return Candidate(program, evaluation)


@pytest.fixture
def sampling_task() -> Task:
    return load_fixture_task("prompt_sampling_task.json", "rotate-demo")


@pytest.fixture
def refinement_task() -> Task:
    return load_fixture_task("prompt_refinement_task.json", "fractal-demo")
