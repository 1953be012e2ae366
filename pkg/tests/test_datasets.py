import json

import pytest

from soar.datasets import REFINEMENT_KIND, SAMPLING_KIND, export_dataset
from soar.errors import VerificationFailure
from soar.executor import MockExecutor
from soar.grids import Grid
from soar.programs import CandidateEvaluation
from soar.selection import RefinementExample, RelabeledExample, relabel
from soar.tasks import Task

from conftest import make_candidate, make_program, ok

IDENTITY = "def transform(grid):\n    return grid"
A = [[1, 2], [3, 4]]
B = [[5, 6], [7, 8]]
C = [[0, 9], [9, 0]]


def _task(truth=None) -> Task:
    grids = [Grid.from_lists(g) for g in (A, B, C)]
    return Task(
        "export-task",
        ((grids[0], grids[0]), (grids[1], grids[1]), (grids[2], grids[2])),
        (grids[0],),
        (Grid.from_lists(truth),) if truth else None,
    )


def _identity_example() -> RelabeledExample:
    task = _task()
    candidate = make_candidate(
        "p0",
        train_outcomes=[ok(A), ok(B), ok(C)],
        test_outcomes=[ok(A)],
        train_accuracy=1.0,
        source=IDENTITY,
    )
    example = relabel(candidate.program, task, candidate.evaluation)
    assert isinstance(example, RelabeledExample)
    return example


def _executor() -> MockExecutor:
    return MockExecutor({IDENTITY: lambda g: [row[:] for row in g]})


def test_single_sampling_record_shape(tmp_path):
    path = tmp_path / "data.jsonl"
    export_dataset([_identity_example()], SAMPLING_KIND, path, executor=_executor())
    lines = path.read_text().splitlines()
    assert len(lines) == 1
    record = json.loads(lines[0])
    roles = [m["role"] for m in record["messages"]]
    assert roles == ["system", "user", "assistant"]
    assert record["messages"][2]["content"] == f"```python\n{IDENTITY}\n```"
    assert record["meta"]["kind"] == "sampling"
    assert record["meta"]["task_id"] == "export-task"


def test_augment_shuffle_is_deterministic(tmp_path):
    example = _identity_example()
    digests = []
    for name in ("one.jsonl", "two.jsonl"):
        digests.append(
            export_dataset([example], SAMPLING_KIND, tmp_path / name, augment_shuffle=True, seed=5)
        )
    assert digests[0] == digests[1]
    assert (tmp_path / "one.jsonl").read_bytes() == (tmp_path / "two.jsonl").read_bytes()


def test_augment_shuffle_permutes_train_order(tmp_path):
    example = _identity_example()
    export_dataset([example], SAMPLING_KIND, tmp_path / "plain.jsonl", augment_shuffle=False)
    export_dataset(
        [example], SAMPLING_KIND, tmp_path / "shuffled.jsonl", augment_shuffle=True, seed=1
    )
    plain = json.loads((tmp_path / "plain.jsonl").read_text())["messages"][1]["content"]
    shuffled = json.loads((tmp_path / "shuffled.jsonl").read_text())["messages"][1]["content"]
    assert plain != shuffled
    # same blocks, different order
    assert sorted(plain.splitlines()) == sorted(shuffled.splitlines())


def test_verification_failure_aborts(tmp_path):
    example = _identity_example()
    # executor disagrees with the stored outputs
    lying = MockExecutor({IDENTITY: lambda g: [[0] * len(r) for r in g]})
    with pytest.raises(VerificationFailure):
        export_dataset([example], SAMPLING_KIND, tmp_path / "bad.jsonl", executor=lying)


def test_refinement_record_contains_feedback(tmp_path):
    task = _task(truth=A)
    parent = make_candidate(
        "parent",
        train_outcomes=[ok(A), ok(A), ok(A)],
        test_outcomes=[ok(B)],
        train_accuracy=1 / 3,
    )
    child = make_program("child", IDENTITY, parent="parent")
    example = RefinementExample(task, parent, child, True, "mid")
    export_dataset([example], REFINEMENT_KIND, tmp_path / "refine.jsonl", executor=_executor())
    record = json.loads((tmp_path / "refine.jsonl").read_text())
    user = record["messages"][1]["content"]
    assert "correctly worked on 1/3 train input-output pairs" in user
    assert record["messages"][2]["content"] == f"```python\n{IDENTITY}\n```"
    assert record["meta"]["parent_bin"] == "mid"


def test_refinement_shuffle_keeps_feedback_aligned(tmp_path):
    task = _task(truth=A)
    # computed grid is A for every pair, so only the (A -> A) pair is correct
    parent = make_candidate(
        "parent",
        train_outcomes=[ok(A), ok(A), ok(A)],
        test_outcomes=[ok(B)],
        train_accuracy=1 / 3,
    )
    child = make_program("child", IDENTITY, parent="parent")
    example = RefinementExample(task, parent, child, True, "mid")
    export_dataset(
        [example], REFINEMENT_KIND, tmp_path / "refine.jsonl", augment_shuffle=True, seed=3
    )
    user = json.loads((tmp_path / "refine.jsonl").read_text())["messages"][1]["content"]
    # wherever the (A -> A) pair landed, the feedback moved with it
    assert "correctly worked on 1/3 train input-output pairs" in user
    assert user.count("is correct.") == 1
    correct_k = next(
        k for k in (1, 2, 3) if f"## Output {k} computed by `transform` is correct." in user
    )
    task_section = user.split("Previous implementation:")[0]
    assert f"## Input {correct_k} (grid shape: 2 by 2):\n[[1 2]\n [3 4]]" in task_section


def test_empty_export(tmp_path):
    path = tmp_path / "empty.jsonl"
    digest = export_dataset([], SAMPLING_KIND, path)
    assert path.read_text() == ""
    assert isinstance(digest, str) and len(digest) == 64


def test_kind_mismatch_rejected(tmp_path):
    with pytest.raises(TypeError):
        export_dataset([_identity_example()], REFINEMENT_KIND, tmp_path / "x.jsonl")
