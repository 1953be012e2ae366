import json

import pytest

from soar.errors import ProtocolViolation
from soar.executor import (
    MockExecutor,
    MockTimeout,
    decode_results,
    encode_request,
    evaluate_batch,
    evaluate_program,
)
from soar.grids import Grid
from soar.tasks import Task

from conftest import make_program

IDENTITY = "def transform(grid):\n    return grid"
TRANSPOSE = "def transform(grid):\n    return [list(r) for r in zip(*grid)]"
CRASH = "def transform(grid):\n    raise ValueError('boom')"
HANG = "def transform(grid):\n    while True: pass"
OVERSIZE = "def transform(grid):\n    return [[0]] * 31"


def _table():
    return MockExecutor(
        {
            IDENTITY: lambda g: [row[:] for row in g],
            TRANSPOSE: lambda g: [list(r) for r in zip(*g)],
            CRASH: lambda g: (_ for _ in ()).throw(ValueError("boom")),
            HANG: lambda g: (_ for _ in ()).throw(MockTimeout()),
            OVERSIZE: lambda g: [[0] for _ in range(31)],
        }
    )


def _identity_task() -> Task:
    g = Grid.from_lists([[5, 1], [2, 0]])
    return Task("ident", ((g, g), (g, g)), (g,))


def test_identity_program_full_accuracy():
    evaluation = evaluate_program(make_program("p", IDENTITY), _identity_task(), _table())
    assert evaluation.train_accuracy == 1.0
    assert evaluation.all_ok


def test_raising_program_all_errors():
    evaluation = evaluate_program(make_program("p", CRASH), _identity_task(), _table())
    assert all(o.status == "error" for o in evaluation.train_outcomes)
    assert all(o.status == "error" for o in evaluation.test_outcomes)
    assert evaluation.train_accuracy == 0.0
    assert "ValueError" in evaluation.train_outcomes[0].message


def test_oversize_output_downgraded_to_invalid():
    evaluation = evaluate_program(make_program("p", OVERSIZE), _identity_task(), _table())
    assert all(o.status == "invalid" for o in evaluation.train_outcomes)


def test_timeout_outcome():
    evaluation = evaluate_program(make_program("p", HANG), _identity_task(), _table())
    assert all(o.status == "timeout" for o in evaluation.train_outcomes)


def test_unknown_source_is_error():
    evaluation = evaluate_program(
        make_program("p", "def transform(grid):\n    return 42"), _identity_task(), _table()
    )
    assert all(o.status == "error" for o in evaluation.train_outcomes)
    assert evaluation.train_outcomes[0].message == "unknown mock program"


def test_transpose_hand_computed():
    # oracle: transpose of [[1, 2]] is [[1], [2]]
    g = Grid.from_lists([[1, 2]])
    task = Task("t", ((g, Grid.from_lists([[1], [2]])),), (g,))
    evaluation = evaluate_program(make_program("p", TRANSPOSE), task, _table())
    assert evaluation.train_outcomes[0].grid.to_lists() == [[1], [2]]
    assert evaluation.train_accuracy == 1.0


def test_mock_determinism():
    program = make_program("p", TRANSPOSE)
    task = _identity_task()
    first = evaluate_program(program, task, _table())
    second = evaluate_program(program, task, _table())
    assert first == second


def test_evaluate_batch_empty():
    assert evaluate_batch([], _identity_task(), _table()) == []


def test_evaluate_batch_preserves_order():
    task = _identity_task()
    programs = [
        make_program(f"p{i:02d}", IDENTITY if i % 2 == 0 else TRANSPOSE) for i in range(10)
    ]
    results = evaluate_batch(programs, task, _table(), parallelism=4)
    assert [r.program_id for r in results] == [p.program_id for p in programs]
    # oracle: sequential evaluation one-by-one
    sequential = [evaluate_program(p, task, _table()) for p in programs]
    assert results == sequential


def test_evaluate_batch_mixed_crash_and_correct():
    task = _identity_task()
    good, bad = make_program("good", IDENTITY), make_program("bad", CRASH)
    results = evaluate_batch([bad, good], task, _table(), parallelism=2)
    assert results[0].train_accuracy == 0.0
    assert results[1].train_accuracy == 1.0


def test_evaluate_batch_survives_executor_failure():
    class FlakyExecutor:
        def run(self, source_text, grids, timeout_ms):
            if "boom" in source_text:
                raise RuntimeError("transport blew up")
            return [_table().run(source_text, grids, timeout_ms), None][0]

    task = _identity_task()
    programs = [
        make_program("a", IDENTITY),
        make_program("b", "def transform(grid):\n    return grid  # boom"),
        make_program("c", IDENTITY),
    ]
    results = evaluate_batch(programs, task, FlakyExecutor(), parallelism=2)
    assert [r.program_id for r in results] == ["a", "b", "c"]
    assert results[0].train_accuracy == 1.0
    assert all(o.status == "error" for o in results[1].train_outcomes)
    assert results[2].train_accuracy == 1.0


def test_batch_order_shuffle_no_cross_contamination():
    task = _identity_task()
    programs = [make_program(f"p{i}", src) for i, src in enumerate([IDENTITY, CRASH, TRANSPOSE])]
    forward = evaluate_batch(programs, task, _table(), parallelism=3)
    backward = evaluate_batch(programs[::-1], task, _table(), parallelism=3)
    assert forward == backward[::-1]


def test_encode_request_wire_shape():
    line = encode_request("abc", IDENTITY, [Grid.from_lists([[1]])], 2000)
    payload = json.loads(line)
    assert payload == {
        "id": "abc",
        "source": IDENTITY,
        "grids": [[[1]]],
        "timeout_ms": 2000,
    }


def test_decode_results_variants():
    reply = {
        "results": [
            {"status": "ok", "grid": [[1]]},
            {"status": "error", "message": "nope"},
            {"status": "timeout"},
            {"status": "ok", "grid": [[99]]},  # invalid cell -> downgraded
        ]
    }
    outcomes = decode_results(reply, 4)
    assert [o.status for o in outcomes] == ["ok", "error", "timeout", "invalid"]


def test_decode_results_length_mismatch():
    with pytest.raises(ProtocolViolation):
        decode_results({"results": [{"status": "timeout"}]}, 2)


def test_decode_results_unknown_status():
    with pytest.raises(ProtocolViolation):
        decode_results({"results": [{"status": "wat"}]}, 1)
