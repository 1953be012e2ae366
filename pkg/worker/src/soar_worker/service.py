"""Request loop: compile a candidate once, run it per grid under limits.

The worker reads one JSON request per stdin line and writes exactly one JSON
response line per request. Candidate code runs in the worker process, fenced
by a wall-clock timer per grid call, an address-space limit, a recursion
limit, and an import hook that only admits the standard library. Candidate
prints are swallowed so the protocol stream stays clean.
"""

from __future__ import annotations

import builtins
import copy
import json
import os
import signal
import sys
from dataclasses import dataclass

try:
    import resource
except ImportError:  # non-POSIX; limits degrade gracefully
    resource = None

DEFAULT_TIMEOUT_MS = 2000
DEFAULT_MEMORY_BYTES = 1024 * 1024 * 1024
DEFAULT_RECURSION_DEPTH = 5000

FULL_POLICY = "full"
RESTRICTED_POLICY = "restricted"


@dataclass(frozen=True)
class WorkerConfig:
    per_call_timeout_ms: int = DEFAULT_TIMEOUT_MS
    max_memory_bytes: int = DEFAULT_MEMORY_BYTES
    max_recursion_depth: int = DEFAULT_RECURSION_DEPTH
    allowed_builtins_policy: str = FULL_POLICY

    def __post_init__(self):
        if self.per_call_timeout_ms <= 0 or self.max_memory_bytes <= 0 or self.max_recursion_depth <= 0:
            raise ValueError("all worker limits must be positive")
        if self.allowed_builtins_policy not in (FULL_POLICY, RESTRICTED_POLICY):
            raise ValueError(f"unknown builtins policy {self.allowed_builtins_policy!r}")


class _CallTimeout(Exception):
    pass


def _alarm_handler(signum, frame):
    raise _CallTimeout()


def _guarded_import(name, globals=None, locals=None, fromlist=(), level=0):
    top = name.partition(".")[0]
    if level == 0 and top not in sys.stdlib_module_names:
        raise ImportError(f"import of non-stdlib module {top!r} is not permitted")
    return builtins.__import__(name, globals, locals, fromlist, level)


_RESTRICTED_NAMES = [
    "abs", "all", "any", "bin", "bool", "bytearray", "bytes", "callable", "chr",
    "complex", "dict", "divmod", "enumerate", "filter", "float", "format",
    "frozenset", "getattr", "hasattr", "hash", "hex", "int", "isinstance",
    "issubclass", "iter", "len", "list", "map", "max", "min", "next", "object",
    "oct", "ord", "pow", "print", "range", "repr", "reversed", "round", "set",
    "slice", "sorted", "str", "sum", "tuple", "type", "zip",
    # exception types so candidates can raise/catch normally
    "ArithmeticError", "AssertionError", "AttributeError", "BaseException",
    "Exception", "IndexError", "KeyError", "LookupError", "MemoryError",
    "NameError", "NotImplementedError", "OverflowError", "RecursionError",
    "RuntimeError", "StopIteration", "TypeError", "ValueError",
    "ZeroDivisionError",
]


def candidate_builtins(policy: str) -> dict:
    if policy == RESTRICTED_POLICY:
        table = {name: getattr(builtins, name) for name in _RESTRICTED_NAMES}
    else:
        table = {k: v for k, v in vars(builtins).items() if k != "__import__"}
        table["__import__"] = _guarded_import
    return table


def compile_candidate(source: str, policy: str):
    """Compile once per request; returns (transform, None) or (None, message)."""
    if not isinstance(source, str) or not source:
        return None, "empty source"
    namespace = {"__builtins__": candidate_builtins(policy), "__name__": "candidate"}
    try:
        code = compile(source, "<candidate>", "exec")
        exec(code, namespace)
    except _CallTimeout:
        raise
    except BaseException as exc:
        return None, f"compile failed: {type(exc).__name__}: {exc}"
    transform = namespace.get("transform")
    if not callable(transform):
        return None, "source does not define a callable `transform`"
    return transform, None


def coerce_grid(value) -> list[list[int]]:
    """Plain nested integer lists only; anything else is a type error."""
    if not isinstance(value, (list, tuple)) or not value:
        raise ValueError(f"transform returned {type(value).__name__}, expected list of rows")
    rows = []
    for row in value:
        if not isinstance(row, (list, tuple)) or not row:
            raise ValueError("rows must be non-empty lists")
        cells = []
        for cell in row:
            if not isinstance(cell, int):  # bools are ints and coerce to 0/1
                raise ValueError(f"cell {cell!r} is not an integer")
            cells.append(int(cell))
        rows.append(cells)
    return rows


def call_with_limits(transform, grid, timeout_ms: int) -> dict:
    """Run one grid call under the wall-clock timer; map failures to statuses."""
    signal.setitimer(signal.ITIMER_REAL, timeout_ms / 1000.0)
    try:
        result = transform(copy.deepcopy(grid))
    except _CallTimeout:
        return {"status": "timeout"}
    except MemoryError:
        return {"status": "error", "message": "MemoryError: allocation exceeded the memory limit"}
    except RecursionError as exc:
        return {"status": "error", "message": f"RecursionError: {exc}"}
    except BaseException as exc:
        return {"status": "error", "message": f"{type(exc).__name__}: {exc}"}
    finally:
        signal.setitimer(signal.ITIMER_REAL, 0.0)
    try:
        return {"status": "ok", "grid": coerce_grid(result)}
    except ValueError as exc:
        return {"status": "error", "message": f"invalid output: {exc}"}


def handle_request(payload, config: WorkerConfig) -> dict:
    request_id = payload.get("id", "") if isinstance(payload, dict) else ""
    grids = payload.get("grids") if isinstance(payload, dict) else None
    if not isinstance(grids, list) or not grids:
        return {"id": request_id, "results": []}
    timeout_ms = payload.get("timeout_ms") or config.per_call_timeout_ms
    source = payload.get("source", "")

    transform, compile_error = compile_candidate(source, config.allowed_builtins_policy)
    if transform is None:
        entry = {"status": "error", "message": compile_error}
        return {"id": request_id, "results": [entry] * len(grids)}
    results = [call_with_limits(transform, grid, int(timeout_ms)) for grid in grids]
    return {"id": request_id, "results": results}


def _apply_process_limits(config: WorkerConfig):
    sys.setrecursionlimit(config.max_recursion_depth)
    if resource is not None:
        try:
            _, hard = resource.getrlimit(resource.RLIMIT_AS)
            resource.setrlimit(resource.RLIMIT_AS, (config.max_memory_bytes, hard))
        except (ValueError, OSError) as exc:
            print(f"worker: cannot set memory limit: {exc}", file=sys.stderr)


def serve_loop(config: WorkerConfig) -> None:
    """Serve requests until stdin closes; the loop survives any bad input."""
    _apply_process_limits(config)
    signal.signal(signal.SIGALRM, _alarm_handler)
    protocol_out = sys.stdout
    sys.stdout = open(os.devnull, "w")  # candidate prints must not touch the protocol
    try:
        for line in sys.stdin:
            line = line.strip()
            if not line:
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError:
                response = {"id": "", "results": []}
            else:
                try:
                    response = handle_request(payload, config)
                except Exception as exc:  # never crash the loop
                    request_id = payload.get("id", "") if isinstance(payload, dict) else ""
                    response = {
                        "id": request_id,
                        "results": [{"status": "error", "message": f"worker fault: {exc}"}],
                    }
            protocol_out.write(json.dumps(response) + "\n")
            protocol_out.flush()
    finally:
        sys.stdout.close()
        sys.stdout = protocol_out
