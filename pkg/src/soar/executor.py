"""Client-side program execution: worker pool, wire protocol, and mock.

One request carries every grid a program needs for one task (all train inputs
followed by all test inputs), so a single worker round-trip yields a complete
evaluation. Worker replies whose grids break the grid invariants are
downgraded to invalid outcomes instead of being trusted.
"""

from __future__ import annotations

import json
import queue
import subprocess
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Protocol, Sequence

from .errors import GridInvariantViolation, ProtocolViolation, WorkerUnavailable
from .grids import Grid
from .programs import Candidate, CandidateEvaluation, Outcome, Program, compute_train_accuracy
from .tasks import Task

DEFAULT_TIMEOUT_MS = 2000


class Executor(Protocol):
    """Anything that can run a transform source over a list of grids."""

    def run(self, source_text: str, grids: Sequence[Grid], timeout_ms: int) -> list[Outcome]: ...


def _validated_ok(raw_grid) -> Outcome:
    try:
        return Outcome.ok(Grid.from_lists(raw_grid))
    except GridInvariantViolation as exc:
        return Outcome.invalid(str(exc))


def decode_results(reply: dict, expected: int) -> list[Outcome]:
    """Turn one wire response into outcomes, enforcing the reply contract."""
    results = reply.get("results")
    if not isinstance(results, list) or len(results) != expected:
        raise ProtocolViolation(
            f"expected {expected} results, got {len(results) if isinstance(results, list) else results!r}"
        )
    outcomes = []
    for entry in results:
        status = entry.get("status") if isinstance(entry, dict) else None
        if status == "ok":
            outcomes.append(_validated_ok(entry.get("grid")))
        elif status == "error":
            outcomes.append(Outcome.error(str(entry.get("message", "unknown error"))))
        elif status == "timeout":
            outcomes.append(Outcome.timeout())
        else:
            raise ProtocolViolation(f"unknown result status {status!r}")
    return outcomes


def encode_request(request_id: str, source_text: str, grids: Sequence[Grid], timeout_ms: int) -> str:
    return json.dumps(
        {
            "id": request_id,
            "source": source_text,
            "grids": [g.to_lists() for g in grids],
            "timeout_ms": timeout_ms,
        }
    )


class _Worker:
    """One subprocess speaking the line-delimited protocol."""

    def __init__(self, command: Sequence[str]):
        self.command = list(command)
        try:
            self.proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise WorkerUnavailable(f"cannot spawn worker {self.command}: {exc}") from exc

    def alive(self) -> bool:
        return self.proc.poll() is None

    def request(self, line: str) -> str:
        assert self.proc.stdin is not None and self.proc.stdout is not None
        self.proc.stdin.write(line + "\n")
        self.proc.stdin.flush()
        reply = self.proc.stdout.readline()
        if reply == "":
            raise BrokenPipeError("worker closed its output")
        return reply

    def kill(self):
        if self.alive():
            self.proc.kill()
        self.proc.wait()


class WorkerPool:
    """Pool of protocol workers; safe for concurrent evaluate calls.

    Crashed workers are respawned and the request retried once before the
    whole request is reported as a worker-crash error.
    """

    def __init__(self, command: Sequence[str], size: int = 4, timeout_ms: int = DEFAULT_TIMEOUT_MS):
        if size < 1:
            raise ValueError("pool size must be >= 1")
        self.command = list(command)
        self.timeout_ms = timeout_ms
        self._idle: queue.Queue[_Worker] = queue.Queue()
        self._workers: list[_Worker] = []
        self._lock = threading.Lock()
        for _ in range(size):
            worker = _Worker(self.command)
            self._workers.append(worker)
            self._idle.put(worker)

    def close(self):
        with self._lock:
            for worker in self._workers:
                worker.kill()
            self._workers.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _replace(self, worker: _Worker) -> _Worker:
        worker.kill()
        fresh = _Worker(self.command)
        with self._lock:
            if worker in self._workers:
                self._workers.remove(worker)
            self._workers.append(fresh)
        return fresh

    def run(self, source_text: str, grids: Sequence[Grid], timeout_ms: int | None = None) -> list[Outcome]:
        if not grids:
            raise ValueError("request needs at least one grid")
        timeout_ms = timeout_ms or self.timeout_ms
        request_id = uuid.uuid4().hex
        line = encode_request(request_id, source_text, grids, timeout_ms)
        worker = self._idle.get()
        try:
            for attempt in (0, 1):
                try:
                    reply_line = worker.request(line)
                    break
                except OSError:
                    worker = self._replace(worker)
                    if attempt == 1:
                        return [Outcome.error("worker crash")] * len(grids)
            try:
                reply = json.loads(reply_line)
            except json.JSONDecodeError as exc:
                raise ProtocolViolation(f"unparseable worker reply: {exc}") from exc
            if reply.get("id") != request_id:
                raise ProtocolViolation(
                    f"reply id {reply.get('id')!r} does not match request {request_id!r}"
                )
            return decode_results(reply, len(grids))
        finally:
            self._idle.put(worker)


class MockTimeout(Exception):
    """Raised by a mock transform to simulate a timeout."""


class MockExecutor:
    """In-process executor mapping exact source text to native transforms."""

    def __init__(self, table: dict[str, Callable[[list[list[int]]], list[list[int]]]]):
        self.table = dict(table)

    def run(self, source_text: str, grids: Sequence[Grid], timeout_ms: int = DEFAULT_TIMEOUT_MS) -> list[Outcome]:
        transform = self.table.get(source_text)
        if transform is None:
            return [Outcome.error("unknown mock program")] * len(grids)
        outcomes = []
        for grid in grids:
            try:
                produced = transform(grid.to_lists())
            except MockTimeout:
                outcomes.append(Outcome.timeout())
            except Exception as exc:  # candidate failures become outcomes
                outcomes.append(Outcome.error(f"{type(exc).__name__}: {exc}"))
            else:
                outcomes.append(_validated_ok(produced))
        return outcomes


def evaluate_program(
    program: Program,
    task: Task,
    executor: Executor,
    timeout_ms: int = DEFAULT_TIMEOUT_MS,
) -> CandidateEvaluation:
    """Run a program on every train and test input in one request."""
    grids = [x for x, _ in task.train_pairs] + list(task.test_inputs)
    outcomes = executor.run(program.source_text, grids, timeout_ms)
    n_train = len(task.train_pairs)
    train_outcomes = tuple(outcomes[:n_train])
    test_outcomes = tuple(outcomes[n_train:])
    return CandidateEvaluation(
        program_id=program.program_id,
        train_outcomes=train_outcomes,
        test_outcomes=test_outcomes,
        train_accuracy=compute_train_accuracy(task, train_outcomes),
    )


def evaluate_batch(
    programs: Sequence[Program],
    task: Task,
    executor: Executor,
    parallelism: int = 4,
    timeout_ms: int = DEFAULT_TIMEOUT_MS,
) -> list[CandidateEvaluation]:
    """Evaluate programs concurrently; results keep the input order.

    Per-program failures become all-error evaluations, never batch aborts.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    if not programs:
        return []

    def one(program: Program) -> CandidateEvaluation:
        try:
            return evaluate_program(program, task, executor, timeout_ms)
        except Exception as exc:
            n_train = len(task.train_pairs)
            n_test = len(task.test_inputs)
            failure = Outcome.error(f"evaluation failed: {exc}")
            return CandidateEvaluation(
                program_id=program.program_id,
                train_outcomes=(failure,) * n_train,
                test_outcomes=(failure,) * n_test,
                train_accuracy=0.0,
            )

    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(one, programs))


def evaluate_candidate(
    program: Program,
    task: Task,
    executor: Executor,
    timeout_ms: int = DEFAULT_TIMEOUT_MS,
) -> Candidate:
    return Candidate(program, evaluate_program(program, task, executor, timeout_ms))
