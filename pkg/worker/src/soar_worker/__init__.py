"""Sandboxed execution worker for candidate grid-transform programs."""

from .service import WorkerConfig, serve_loop

__all__ = ["WorkerConfig", "serve_loop"]
