"""Chat and embedding clients plus deterministic in-memory mocks.

Network clients speak the common chat-completions JSON shape: POST
``{base_url}/chat/completions`` returning ``choices[0].message.content``, and
POST ``{base_url}/embeddings`` returning ``data[i].embedding``. Transport
failures, timeouts, 429 and 5xx responses are retried with exponential
backoff and jitter up to ``max_retries``; other 4xx fail immediately. API
keys are read from an environment variable only, never from config files.

Mock clients implement the same call shape, record every request, and are the
only clients the CLI constructs in ``--mock`` mode; a module-level guard turns
any accidental network call into MockModeViolation.
"""

from __future__ import annotations

import os
import random
import re
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np
import requests

from .errors import (
    ClientError,
    ClientErrorKind,
    DimensionMismatch,
    JudgeUnparseable,
    MockModeViolation,
    UnscriptedRequest,
)
from .util import stable_digest

_mock_mode = False


def set_mock_mode(enabled: bool):
    """Globally forbid (or re-allow) network clients. The CLI sets this for --mock."""
    global _mock_mode
    _mock_mode = bool(enabled)


def mock_mode_active() -> bool:
    return _mock_mode


class Verdict(Enum):
    YES = "yes"
    NO = "no"


_VERDICT_RE = re.compile(r"\[\[\s*(yes|no)\s*\]\]", re.IGNORECASE)


def parse_verdict(text: str) -> Verdict:
    """Read a [[YES]]/[[NO]] verdict; the last occurrence wins.

    The inner word is case-insensitive. No marker at all raises
    JudgeUnparseable.
    """
    matches = _VERDICT_RE.findall(text)
    if not matches:
        raise JudgeUnparseable(f"no [[YES]]/[[NO]] marker in: {text[:200]!r}")
    return Verdict.YES if matches[-1].lower() == "yes" else Verdict.NO


@dataclass
class ChatRequest:
    messages: list[dict]
    model: str | None = None
    temperature: float = 0.0
    top_p: float = 1.0
    max_tokens: int | None = None

    def text(self) -> str:
        """All message contents joined; what mock matchers run against."""
        return "\n".join(m.get("content", "") for m in self.messages)


@dataclass
class ClientConfig:
    base_url: str = "http://127.0.0.1:8000/v1"
    model: str = "default"
    api_key_env: str = "STEPSHAPE_API_KEY"
    timeout: float = 60.0
    max_retries: int = 3
    backoff_base: float = 0.5
    max_concurrency: int = 8

    @classmethod
    def from_env(cls, **overrides) -> "ClientConfig":
        cfg = cls(**overrides)
        env_url = os.environ.get("STEPSHAPE_BASE_URL")
        if env_url and "base_url" not in overrides:
            cfg.base_url = env_url
        return cfg


class _NetworkClient:
    def __init__(self, config: ClientConfig | None = None):
        self.config = config or ClientConfig.from_env()
        self._semaphore = threading.Semaphore(self.config.max_concurrency)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post_json(self, path: str, payload: dict) -> dict:
        if mock_mode_active():
            raise MockModeViolation("network client called while mock mode is active")
        url = self.config.base_url.rstrip("/") + path
        last: ClientError | None = None
        with self._semaphore:
            for attempt in range(self.config.max_retries + 1):
                if attempt:
                    base = self.config.backoff_base
                    time.sleep(base * 2 ** (attempt - 1) + random.uniform(0, base))
                try:
                    resp = requests.post(url, json=payload, headers=self._headers(), timeout=self.config.timeout)
                except requests.Timeout as exc:
                    last = ClientError(ClientErrorKind.TIMEOUT, f"timeout calling {url}: {exc}")
                    continue
                except requests.RequestException as exc:
                    last = ClientError(ClientErrorKind.TRANSPORT, f"transport failure calling {url}: {exc}")
                    continue
                if resp.status_code == 429 or resp.status_code >= 500:
                    last = ClientError(
                        ClientErrorKind.HTTP_STATUS,
                        f"retryable HTTP {resp.status_code} from {url}",
                        status=resp.status_code,
                    )
                    continue
                if resp.status_code >= 400:
                    raise ClientError(
                        ClientErrorKind.HTTP_STATUS,
                        f"HTTP {resp.status_code} from {url}: {resp.text[:200]}",
                        status=resp.status_code,
                    )
                try:
                    return resp.json()
                except ValueError as exc:
                    raise ClientError(ClientErrorKind.MALFORMED_RESPONSE, f"non-JSON body from {url}: {exc}")
        raise ClientError(
            ClientErrorKind.EXHAUSTED_RETRIES,
            f"gave up on {url} after {self.config.max_retries} retries; last error: {last}",
        ) from last


class ChatClient(_NetworkClient):
    def chat(self, request: ChatRequest) -> str:
        payload = {
            "model": request.model or self.config.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "top_p": request.top_p,
        }
        if request.max_tokens is not None:
            payload["max_tokens"] = request.max_tokens
        data = self._post_json("/chat/completions", payload)
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ClientError(ClientErrorKind.MALFORMED_RESPONSE, f"unexpected chat payload shape: {exc}")
        if not isinstance(content, str):
            raise ClientError(ClientErrorKind.MALFORMED_RESPONSE, "message content is not a string")
        return content


def _normalize_rows(vectors: list[np.ndarray]) -> list[np.ndarray]:
    out = []
    for vec in vectors:
        norm = float(np.linalg.norm(vec))
        out.append(vec / norm if norm > 0.0 else vec)
    return out


class EmbeddingClient(_NetworkClient):
    def embed(self, texts: Sequence[str], model: str | None = None) -> list[np.ndarray]:
        """Embed a batch; rows come back L2-normalized, aligned with inputs."""
        if not texts:
            raise ValueError("embed() needs at least one text")
        data = self._post_json("/embeddings", {"model": model or self.config.model, "input": list(texts)})
        try:
            rows = data["data"]
            rows = sorted(rows, key=lambda r: r.get("index", 0))
            vectors = [np.asarray(r["embedding"], dtype=np.float64) for r in rows]
        except (KeyError, TypeError) as exc:
            raise ClientError(ClientErrorKind.MALFORMED_RESPONSE, f"unexpected embeddings payload: {exc}")
        if len(vectors) != len(texts):
            raise ClientError(
                ClientErrorKind.MALFORMED_RESPONSE,
                f"asked for {len(texts)} embeddings, got {len(vectors)}",
            )
        dims = {v.shape for v in vectors}
        if len(dims) > 1:
            raise DimensionMismatch(f"inconsistent embedding dimensions in batch: {sorted(dims)}")
        return _normalize_rows(vectors)


# --- mocks -------------------------------------------------------------------


@dataclass
class MockChatClient:
    """Scripted chat client for tests and --mock runs.

    Resolution order per request: first matching ``script`` entry (substring
    or predicate matchers), then the positional ``responses`` queue, then the
    ``handler`` fallback. With ``strict`` (default) an unresolved request
    raises UnscriptedRequest; otherwise it returns "".
    """

    script: list[tuple] = field(default_factory=list)
    responses: Sequence[str] | None = None
    handler: Callable[[ChatRequest], str] | None = None
    strict: bool = True

    def __post_init__(self):
        self.calls: list[ChatRequest] = []
        self._queue = deque(self.responses or [])
        self._lock = threading.Lock()

    def chat(self, request: ChatRequest) -> str:
        with self._lock:
            self.calls.append(request)
            text = request.text()
            for matcher, reply in self.script:
                hit = matcher(request) if callable(matcher) else (matcher in text)
                if hit:
                    return reply(request) if callable(reply) else reply
            if self._queue:
                return self._queue.popleft()
        if self.handler is not None:
            return self.handler(request)
        if self.strict:
            raise UnscriptedRequest(f"no script entry matches request: {text[:200]!r}")
        return ""

    def call_count(self, substring: str) -> int:
        return sum(1 for c in self.calls if substring in c.text())


@dataclass
class MockEmbeddingClient:
    """Deterministic embeddings: a digest-seeded unit vector per text."""

    dim: int = 16
    overrides: dict | None = None

    def __post_init__(self):
        self.calls: list[list[str]] = []
        self._lock = threading.Lock()

    def _vector(self, text: str) -> np.ndarray:
        if self.overrides and text in self.overrides:
            vec = np.asarray(self.overrides[text], dtype=np.float64)
        else:
            rng = np.random.default_rng(stable_digest(text, salt="embed"))
            vec = rng.standard_normal(self.dim)
        return _normalize_rows([vec])[0]

    def embed(self, texts: Sequence[str], model: str | None = None) -> list[np.ndarray]:
        if not texts:
            raise ValueError("embed() needs at least one text")
        with self._lock:
            self.calls.append(list(texts))
        vectors = [self._vector(t) for t in texts]
        dims = {v.shape for v in vectors}
        if len(dims) > 1:
            raise DimensionMismatch(f"override dimensions disagree: {sorted(dims)}")
        return vectors
