"""Chat-completion backends: OpenAI-compatible HTTP client plus mocks."""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, replace
from typing import Callable, Protocol, Sequence

import requests

from .errors import BackendUnavailable, QuotaExceeded
from .prompts import ChatMessage


@dataclass(frozen=True)
class SamplingParams:
    n_completions: int = 1
    temperature: float = 1.0
    min_p: float = 0.05
    max_tokens: int = 2048
    model_tag: str = "default"
    seed: int = 0

    def __post_init__(self):
        if self.n_completions < 1:
            raise ValueError("n_completions must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 <= self.min_p <= 1:
            raise ValueError("min_p must be in [0, 1]")

    def with_n(self, n: int) -> "SamplingParams":
        return replace(self, n_completions=n)


class ChatBackend(Protocol):
    def complete(self, messages: Sequence[ChatMessage], params: SamplingParams) -> list[str]: ...


class TokenBucket:
    """Simple blocking rate limiter; ``rate`` is permits per second."""

    def __init__(self, rate: float, capacity: float | None = None):
        self.rate = rate
        self.capacity = capacity if capacity is not None else max(rate, 1.0)
        self._tokens = self.capacity
        self._stamp = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self):
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(self.capacity, self._tokens + (now - self._stamp) * self.rate)
                self._stamp = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            time.sleep(wait)


class OpenAIChatBackend:
    """Client for an OpenAI-compatible chat-completions endpoint.

    Transient transport failures (connection errors, 5xx, 429) are retried
    with exponential backoff; exhausted 429s surface as QuotaExceeded so
    callers can tell throttling apart from outages. ``min_p`` is forwarded
    only when the endpoint is declared to support it; whether it was sent is
    exposed for run manifests via ``min_p_forwarded``.
    """

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        model: str = "default",
        supports_min_p: bool = True,
        max_retries: int = 3,
        backoff_s: float = 0.5,
        timeout_s: float = 120.0,
        requests_per_second: float | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.model = model
        self.supports_min_p = supports_min_p
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self.timeout_s = timeout_s
        self.bucket = TokenBucket(requests_per_second) if requests_per_second else None
        self.min_p_forwarded = supports_min_p

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def complete(self, messages: Sequence[ChatMessage], params: SamplingParams) -> list[str]:
        body: dict = {
            "model": params.model_tag if params.model_tag != "default" else self.model,
            "messages": [m.to_dict() for m in messages],
            "n": params.n_completions,
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        }
        if self.supports_min_p:
            body["min_p"] = params.min_p
        if params.seed:
            body["seed"] = params.seed

        last_error: Exception | None = None
        quota_hit = False
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff_s * (2 ** (attempt - 1)))
            if self.bucket:
                self.bucket.acquire()
            try:
                response = requests.post(
                    f"{self.base_url}/chat/completions",
                    json=body,
                    headers=self._headers(),
                    timeout=self.timeout_s,
                )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if response.status_code == 429:
                quota_hit = True
                last_error = BackendUnavailable(f"429: {response.text[:200]}")
                continue
            if response.status_code >= 500:
                last_error = BackendUnavailable(f"{response.status_code}: {response.text[:200]}")
                continue
            if response.status_code != 200:
                raise BackendUnavailable(
                    f"chat endpoint rejected request ({response.status_code}): {response.text[:500]}"
                )
            payload = response.json()
            choices = payload.get("choices", [])
            texts = [c.get("message", {}).get("content", "") or "" for c in choices]
            if len(texts) != params.n_completions:
                raise BackendUnavailable(
                    f"endpoint returned {len(texts)} completions, expected {params.n_completions}"
                )
            return texts
        if quota_hit:
            raise QuotaExceeded(f"quota exhausted after {self.max_retries + 1} attempts: {last_error}")
        raise BackendUnavailable(f"chat backend failed after {self.max_retries + 1} attempts: {last_error}")


class ScriptedChatBackend:
    """Deterministic mock driven by a responder callable.

    The responder receives ``(messages, params, call_index)`` and returns the
    completion texts; identical call sequences yield identical outputs.
    """

    def __init__(self, responder: Callable[[Sequence[ChatMessage], SamplingParams, int], list[str]]):
        self.responder = responder
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, messages: Sequence[ChatMessage], params: SamplingParams) -> list[str]:
        with self._lock:
            index = self.calls
            self.calls += 1
        texts = self.responder(messages, params, index)
        if len(texts) != params.n_completions:
            raise BackendUnavailable(
                f"scripted backend produced {len(texts)} texts, expected {params.n_completions}"
            )
        return list(texts)


def chat_complete(
    backend: ChatBackend, messages: Sequence[ChatMessage], params: SamplingParams
) -> list[str]:
    """Request exactly ``params.n_completions`` texts from the backend."""
    return backend.complete(messages, params)
