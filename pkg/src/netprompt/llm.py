"""Chat-completion providers: live HTTP, scripted mock, record and replay.

Every provider exposes ``complete(request) -> str``.  Transcripts are JSON
lines keyed by a stable 64-bit hash of the canonical request.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Protocol

import httpx

logger = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")
DEFAULT_OPTIMIZE_TEMPERATURE = 0.3
DEFAULT_PREDICT_TEMPERATURE = 0.2


class LLMError(Exception):
    pass


class ConfigurationError(LLMError):
    pass


class TransportError(LLMError):
    pass


class ProviderError(LLMError):
    def __init__(self, status: int, body: str):
        super().__init__(f"provider returned HTTP {status}: {body[:200]}")
        self.status = status
        self.body = body


class MockMissError(LLMError):
    pass


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")
        if not self.content:
            raise ValueError("message content must be non-empty")

    def to_dict(self) -> dict:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[ChatMessage, ...]
    model: str = "mock"
    temperature: float = DEFAULT_OPTIMIZE_TEMPERATURE
    max_tokens: int = 512

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise ValueError("request needs at least one message")
        if not (0.0 <= self.temperature <= 2.0):
            raise ValueError("temperature must lie in [0, 2]")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "messages": [m.to_dict() for m in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChatRequest":
        return cls(
            messages=tuple(ChatMessage(m["role"], m["content"]) for m in d["messages"]),
            model=d["model"],
            temperature=float(d["temperature"]),
            max_tokens=int(d["max_tokens"]),
        )

    @property
    def last_user(self) -> str:
        for m in reversed(self.messages):
            if m.role == "user":
                return m.content
        return ""


def request_hash(request: ChatRequest) -> str:
    canonical = json.dumps(request.to_dict(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.blake2b(canonical.encode("utf-8"), digest_size=8).hexdigest()


@dataclass(frozen=True)
class TranscriptRecord:
    request: ChatRequest
    response_text: str
    latency_ms: float
    timestamp: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "hash": request_hash(self.request),
                "request": self.request.to_dict(),
                "response_text": self.response_text,
                "latency_ms": self.latency_ms,
                "timestamp": self.timestamp,
            },
            sort_keys=True,
            ensure_ascii=False,
        )

    @classmethod
    def from_json(cls, line: str) -> "TranscriptRecord":
        d = json.loads(line)
        return cls(ChatRequest.from_dict(d["request"]), d["response_text"], float(d["latency_ms"]), d["timestamp"])


def read_transcript(path) -> list[TranscriptRecord]:
    with open(path, encoding="utf-8") as fh:
        return [TranscriptRecord.from_json(line) for line in fh if line.strip()]


class Provider(Protocol):
    def complete(self, request: ChatRequest) -> str: ...


@dataclass(frozen=True)
class ProviderConfig:
    base_url: str = "http://localhost:8000"
    api_key_env: str = "LLM_API_KEY"
    timeout_s: float = 60.0
    max_retries: int = 3
    retry_backoff_s: float = 1.0

    def __post_init__(self):
        if not self.timeout_s > 0:
            raise ConfigurationError("timeout_s must be positive")
        if self.max_retries < 0:
            raise ConfigurationError("max_retries must be >= 0")


class HttpProvider:
    """``POST {base_url}/v1/chat/completions`` with retries on transient failures.

    Transport errors, 429 and 5xx responses are retried with exponential
    backoff; other non-2xx responses raise :class:`ProviderError` at once.
    """

    def __init__(self, config: ProviderConfig, transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.config = config
        self._sleep = sleep
        key = os.environ.get(config.api_key_env)
        if not key:
            raise ConfigurationError(f"environment variable {config.api_key_env} is not set")
        self._client = httpx.Client(
            base_url=config.base_url.rstrip("/"),
            headers={"Authorization": f"Bearer {key}"},
            timeout=config.timeout_s,
            transport=transport,
        )
        self.attempts = 0

    def complete(self, request: ChatRequest) -> str:
        cfg = self.config
        last_exc: Exception | None = None
        for attempt in range(cfg.max_retries + 1):
            if attempt:
                self._sleep(cfg.retry_backoff_s * 2 ** (attempt - 1))
            self.attempts += 1
            try:
                resp = self._client.post("/v1/chat/completions", json=request.to_dict())
            except httpx.TransportError as exc:
                logger.warning("chat request failed (attempt %d): %s", attempt + 1, exc)
                last_exc = TransportError(str(exc))
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                logger.warning("chat request got HTTP %d (attempt %d)", resp.status_code, attempt + 1)
                last_exc = ProviderError(resp.status_code, resp.text)
                continue
            if not 200 <= resp.status_code < 300:
                raise ProviderError(resp.status_code, resp.text)
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise ProviderError(resp.status_code, f"malformed body: {resp.text}") from exc
        assert last_exc is not None
        raise last_exc

    def close(self) -> None:
        self._client.close()


class EchoProvider:
    """Returns the last user message verbatim."""

    def complete(self, request: ChatRequest) -> str:
        return request.last_user


@dataclass(frozen=True)
class Matcher:
    substring: str | None = None
    hash: str | None = None

    def matches(self, request: ChatRequest) -> bool:
        if self.hash is not None:
            return request_hash(request) == self.hash
        text = "\n".join(m.content for m in request.messages)
        return self.substring is not None and self.substring in text


class ScriptedMock:
    """First matching entry wins; an unmatched request is an error."""

    def __init__(self, script: Iterable[tuple[Matcher | str, str]]):
        entries = []
        for matcher, response in script:
            if isinstance(matcher, str):
                matcher = Matcher(substring=matcher)
            entries.append((matcher, response))
        if not entries:
            raise ConfigurationError("mock script is empty")
        self.script = tuple(entries)

    def complete(self, request: ChatRequest) -> str:
        for matcher, response in self.script:
            if matcher.matches(request):
                return response
        raise MockMissError(f"no scripted response for request {request_hash(request)}")


def make_mock(script) -> ScriptedMock:
    return ScriptedMock(script)


def load_mock_script(path) -> ScriptedMock:
    """Load ``[{"match": "...", "response": "..."} | {"hash": "...", "response": "..."}]``."""
    entries = json.loads(Path(path).read_text(encoding="utf-8"))
    script = []
    for i, e in enumerate(entries):
        if "hash" in e:
            m = Matcher(hash=e["hash"])
        elif "match" in e:
            m = Matcher(substring=e["match"])
        else:
            raise ConfigurationError(f"mock script entry {i} has neither 'match' nor 'hash'")
        script.append((m, e["response"]))
    return ScriptedMock(script)


class FunctionProvider:
    """Wraps a pure ``request -> text`` callable."""

    def __init__(self, fn: Callable[[ChatRequest], str]):
        self.fn = fn

    def complete(self, request: ChatRequest) -> str:
        return self.fn(request)


class RecordingProvider:
    """Forwards to ``inner`` and appends one transcript line per call."""

    def __init__(self, inner: Provider, path, clock: Callable[[], datetime] | None = None):
        self.inner = inner
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._clock = clock or (lambda: datetime.now(timezone.utc))

    def complete(self, request: ChatRequest) -> str:
        t0 = time.perf_counter()
        text = self.inner.complete(request)
        latency = (time.perf_counter() - t0) * 1000.0
        rec = TranscriptRecord(request, text, round(latency, 3), self._clock().isoformat())
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(rec.to_json() + "\n")
        return text


class ReplayProvider:
    """Serves recorded responses; repeated identical requests replay in order."""

    def __init__(self, path):
        self._queues: dict[str, deque] = defaultdict(deque)
        for rec in read_transcript(path):
            self._queues[request_hash(rec.request)].append(rec.response_text)
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> str:
        h = request_hash(request)
        with self._lock:
            q = self._queues.get(h)
            if not q:
                raise MockMissError(f"no recorded response for request {h}")
            return q.popleft()


def complete(provider: Provider, request: ChatRequest) -> str:
    return provider.complete(request)


@dataclass
class CallCounter:
    """Wraps a provider and counts calls; handy for tests and run logs."""

    inner: Provider
    calls: int = field(default=0)

    def complete(self, request: ChatRequest) -> str:
        self.calls += 1
        return self.inner.complete(request)
