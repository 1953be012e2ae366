"""Embedding backends and cosine geometry used by dedup and diversity."""

from __future__ import annotations

import hashlib
import math
import re
import time
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
import requests

from .errors import BackendUnavailable


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    model_tag: str = "default"

    def __post_init__(self):
        if not self.values:
            raise ValueError("embedding must be non-empty")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("embedding contains non-finite values")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    va, vb = a.as_array(), b.as_array()
    denom = float(np.linalg.norm(va) * np.linalg.norm(vb))
    if denom == 0.0:
        return 0.0
    return float(np.dot(va, vb) / denom)


class EmbeddingBackend(Protocol):
    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]: ...


class OpenAIEmbeddingBackend:
    """Client for an OpenAI-compatible embeddings endpoint."""

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        model: str = "default",
        max_retries: int = 3,
        backoff_s: float = 0.5,
        timeout_s: float = 120.0,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.model = model
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self.timeout_s = timeout_s

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        if not texts:
            return []
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff_s * (2 ** (attempt - 1)))
            try:
                response = requests.post(
                    f"{self.base_url}/embeddings",
                    json={"model": self.model, "input": list(texts)},
                    headers=headers,
                    timeout=self.timeout_s,
                )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if response.status_code in (429,) or response.status_code >= 500:
                last_error = BackendUnavailable(f"{response.status_code}: {response.text[:200]}")
                continue
            if response.status_code != 200:
                raise BackendUnavailable(
                    f"embedding endpoint rejected request ({response.status_code}): {response.text[:500]}"
                )
            data = sorted(response.json().get("data", []), key=lambda d: d.get("index", 0))
            if len(data) != len(texts):
                raise BackendUnavailable(
                    f"endpoint returned {len(data)} embeddings for {len(texts)} texts"
                )
            return [
                EmbeddingVector(tuple(float(v) for v in d["embedding"]), model_tag=self.model)
                for d in data
            ]
        raise BackendUnavailable(
            f"embedding backend failed after {self.max_retries + 1} attempts: {last_error}"
        )


_TOKEN_RE = re.compile(r"\w+")


class HashingEmbeddingBackend:
    """Deterministic mock: hashes the token multiset into a fixed-length vector.

    Identical token multisets map to identical vectors, so byte-identical
    solutions always collide and near-identical ones land close together.
    """

    def __init__(self, dim: int = 64, model_tag: str = "hashing-mock"):
        if dim < 2:
            raise ValueError("dim must be >= 2")
        self.dim = dim
        self.model_tag = model_tag

    def _embed_one(self, text: str) -> EmbeddingVector:
        vec = np.zeros(self.dim, dtype=float)
        for token in _TOKEN_RE.findall(text.lower()):
            digest = hashlib.sha256(token.encode("utf-8")).digest()
            index = int.from_bytes(digest[:4], "big") % self.dim
            sign = 1.0 if digest[4] % 2 == 0 else -1.0
            vec[index] += sign
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            vec[0] = 1.0
            norm = 1.0
        return EmbeddingVector(tuple(float(v) for v in vec / norm), model_tag=self.model_tag)

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        return [self._embed_one(t) for t in texts]


class FixedEmbeddingBackend:
    """Test helper mapping exact texts to preset vectors."""

    def __init__(self, table: dict[str, Sequence[float]], model_tag: str = "fixed"):
        self.table = {k: tuple(float(x) for x in v) for k, v in table.items()}
        self.model_tag = model_tag

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        missing = [t for t in texts if t not in self.table]
        if missing:
            raise BackendUnavailable(f"no fixed embedding for {missing[0][:40]!r}")
        return [EmbeddingVector(self.table[t], model_tag=self.model_tag) for t in texts]
