"""Worker entry point: configure limits from flags and serve stdin."""

from __future__ import annotations

import argparse
import sys

from .service import (
    DEFAULT_MEMORY_BYTES,
    DEFAULT_RECURSION_DEPTH,
    DEFAULT_TIMEOUT_MS,
    FULL_POLICY,
    RESTRICTED_POLICY,
    WorkerConfig,
    serve_loop,
)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="soar-worker", description=__doc__)
    parser.add_argument("--timeout-ms", type=int, default=DEFAULT_TIMEOUT_MS)
    parser.add_argument("--max-memory-bytes", type=int, default=DEFAULT_MEMORY_BYTES)
    parser.add_argument("--max-recursion", type=int, default=DEFAULT_RECURSION_DEPTH)
    parser.add_argument("--restricted", action="store_true")
    args = parser.parse_args(argv)
    config = WorkerConfig(
        per_call_timeout_ms=args.timeout_ms,
        max_memory_bytes=args.max_memory_bytes,
        max_recursion_depth=args.max_recursion,
        allowed_builtins_policy=RESTRICTED_POLICY if args.restricted else FULL_POLICY,
    )
    serve_loop(config)
    return 0


if __name__ == "__main__":
    sys.exit(main())
