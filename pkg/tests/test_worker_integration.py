"""Pool-against-real-worker integration: timeouts, crashes, protocol decode.

Skipped when the worker package is not installed; its own conformance suite
lives in the worker project.
"""

import importlib.util
import json
import os
import sys
import time

import pytest

from soar.executor import WorkerPool, decode_results, evaluate_program
from soar.grids import Grid
from soar.search import SearchBudget, SearchContext, run_search
from soar.runner import config_from_dict, build_chat_backend, build_executor_backend
from soar.tasks import Task, load_tasks

from conftest import GOLDEN, make_program

WORKER_AVAILABLE = importlib.util.find_spec("soar_worker") is not None
pytestmark = pytest.mark.skipif(not WORKER_AVAILABLE, reason="soar_worker not installed")

WORKER_CMD = [sys.executable, "-m", "soar_worker"]


def _task() -> Task:
    g = Grid.from_lists([[5, 1], [2, 0]])
    return Task("integration", ((g, g), (g, g)), (g,))


def test_pool_evaluates_real_program():
    with WorkerPool(WORKER_CMD, size=2, timeout_ms=2000) as pool:
        program = make_program("p", "def transform(grid):\n    return [row[:] for row in grid]")
        evaluation = evaluate_program(program, _task(), pool)
        assert evaluation.train_accuracy == 1.0
        assert evaluation.all_ok


def test_pool_timeout_containment_and_reuse():
    timeout_ms = 300
    with WorkerPool(WORKER_CMD, size=1, timeout_ms=timeout_ms) as pool:
        hang = make_program("hang", "def transform(grid):\n    while True:\n        pass")
        started = time.monotonic()
        evaluation = evaluate_program(hang, _task(), pool, timeout_ms=timeout_ms)
        elapsed = time.monotonic() - started
        n_calls = len(_task().train_pairs) + 1  # timer runs per grid call
        assert all(o.status == "timeout" for o in evaluation.train_outcomes)
        assert elapsed < n_calls * (timeout_ms / 1000.0) * 2 + 0.5
        # the pool stays usable afterwards
        ident = make_program("ok", "def transform(grid):\n    return grid")
        follow_up = evaluate_program(ident, _task(), pool, timeout_ms=timeout_ms)
        assert follow_up.train_accuracy == 1.0


def test_pool_respawns_after_worker_crash():
    with WorkerPool(WORKER_CMD, size=1, timeout_ms=2000) as pool:
        killer = make_program(
            "kill", "def transform(grid):\n    import os\n    os._exit(7)"
        )
        evaluation = evaluate_program(killer, _task(), pool)
        assert all(o.status == "error" for o in evaluation.train_outcomes)
        assert evaluation.train_outcomes[0].message == "worker crash"
        survivor = make_program("ok", "def transform(grid):\n    return grid")
        assert evaluate_program(survivor, _task(), pool).train_accuracy == 1.0


def test_transcript_responses_decode_with_downgrade():
    transcript = json.loads((GOLDEN / "protocol_transcript.json").read_text())
    for case in transcript:
        expected_n = len(case["request"]["grids"])
        outcomes = decode_results(case["response"], expected_n)
        statuses = [o.status for o in outcomes]
        if "client_downgrade" in case:
            assert statuses == case["client_downgrade"]
        else:
            assert statuses == [r["status"] for r in case["response"]["results"]]


def test_search_end_to_end_with_real_worker(tmp_path):
    """Mock chat, real execution: the full search loop over the wire."""
    from soar.mocks import BankChatBackend

    with WorkerPool(WORKER_CMD, size=2, timeout_ms=1000) as pool:
        ctx = SearchContext(chat=BankChatBackend(), executor=pool, seed=5, timeout_ms=1000)
        budget = SearchBudget(sample_budget=20, refine_budget=8, batch_size=10, early_stop_perfect=100)
        result = run_search(_task(), ctx, budget)
        assert result.total_attempts <= 28
        assert result.sample.attempts == 20
        assert any(c.evaluation.train_perfect for c in result.candidates)


@pytest.mark.skipif(
    not os.environ.get("SOAR_CHAT_URL"),
    reason="live endpoint integration needs SOAR_CHAT_URL",
)
def test_live_solve_three_tasks(tmp_path):
    """Optional gate: live model endpoint, budget accounting only."""
    task_dir = os.environ.get("SOAR_TASK_DIR")
    if not task_dir:
        pytest.skip("set SOAR_TASK_DIR to a directory of ARC training tasks")
    tasks = load_tasks(task_dir)[:3]
    config = config_from_dict(
        {
            "tasks": [task_dir],
            "chat": {"kind": "openai"},
            "executor": {"kind": "worker", "command": WORKER_CMD, "pool_size": 2},
            "budget": {
                "sample_budget": 20,
                "refine_budget": 12,
                "batch_size": 10,
                "early_stop_perfect": 5,
            },
        }
    )
    chat = build_chat_backend(config)
    executor = build_executor_backend(config)
    try:
        for task in tasks:
            ctx = SearchContext(chat=chat, executor=executor, seed=1)
            result = run_search(task, ctx, config.budget, config.rex)
            assert result.total_attempts <= 32
    finally:
        executor.close()
