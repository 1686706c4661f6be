"""Chat-model backends: a remote chat-completions client and a scripted replay
backend for tests, both with token and cost accounting.

Remote wire format is the common chat-completions JSON shape: request carries a
messages array of {role, content}; the response is read from
choices[0].message.content with usage.prompt_tokens / usage.completion_tokens.
Credentials come from the SPECHARNESS_API_KEY environment variable. When a
backend reports no usage, tokens are estimated as len(text) // 4 and flagged.
"""

from __future__ import annotations

import json
import os
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass

from .errors import (
    AuthenticationError,
    ContextLengthError,
    RetriesExhaustedError,
    ScriptExhaustedError,
)

API_KEY_ENV = "SPECHARNESS_API_KEY"

# Deterministic decoding for the history-bearing strategies, diversity for
# independent sampling; override per run as needed.
DEFAULT_TEMPERATURE = {"exploratory": 0.0, "greedy": 0.0, "random_sampling": 1.0}


def default_temperature(mode: str) -> float:
    return DEFAULT_TEMPERATURE.get(mode, 0.0)


def estimate_tokens(text: str) -> int:
    return len(text) // 4


@dataclass(frozen=True)
class ChatMessage:
    role: str  # "system" | "user" | "assistant"
    content: str

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"unknown role {self.role!r}")
        if self.role in ("user", "assistant") and not self.content:
            raise ValueError("user/assistant message content must be non-empty")


@dataclass(frozen=True)
class GenerationResult:
    text: str
    input_tokens: int
    output_tokens: int
    latency_ms: int
    backend_id: str
    tokens_estimated: bool = False
    retries: int = 0


@dataclass(frozen=True)
class BackendConfig:
    kind: str  # "remote" | "scripted"
    endpoint: str = ""
    model_name: str = ""
    temperature: float | None = None
    max_output_tokens: int = 1024
    max_retries: int = 3
    backoff_s: float = 0.5
    price_per_input_token: float = 0.0
    price_per_output_token: float = 0.0
    script: tuple[str, ...] | None = None
    api_key_env: str = API_KEY_ENV
    max_in_flight: int = 4

    def __post_init__(self):
        if self.kind not in ("remote", "scripted"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.kind == "remote" and not self.endpoint:
            raise ValueError("remote backend requires an endpoint")
        if self.kind == "scripted" and not self.script:
            raise ValueError("scripted backend requires a non-empty script")


class ScriptedBackend:
    """Replays a fixed turn list; one instance serves exactly one session."""

    def __init__(self, script, backend_id: str = "scripted"):
        script = list(script)
        if not script:
            raise ValueError("script must be non-empty")
        self._script = script
        self._cursor = 0
        self.backend_id = backend_id
        self.calls: list[list[ChatMessage]] = []

    @property
    def consumed(self) -> int:
        return self._cursor

    def generate(self, messages) -> GenerationResult:
        self.calls.append(list(messages))
        if self._cursor >= len(self._script):
            raise ScriptExhaustedError(
                f"script exhausted after {len(self._script)} turns"
            )
        text = self._script[self._cursor]
        self._cursor += 1
        return GenerationResult(
            text=text,
            input_tokens=sum(estimate_tokens(m.content) for m in messages),
            output_tokens=estimate_tokens(text),
            latency_ms=0,
            backend_id=self.backend_id,
            tokens_estimated=True,
        )


def load_script(path) -> list[str]:
    """A script file is a JSON array of turn strings."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list) or not all(isinstance(item, str) for item in data):
        raise ValueError(f"script file {path} must contain a JSON array of strings")
    return data


class RemoteBackend:
    """Chat-completions client with bounded retries and an in-flight cap."""

    retryable_statuses = frozenset({408, 409, 429, 500, 502, 503, 504})

    def __init__(self, config: BackendConfig, *, opener=None, sleep=time.sleep):
        self.config = config
        self.backend_id = config.model_name or config.endpoint
        self._opener = opener or urllib.request.urlopen
        self._sleep = sleep
        self._gate = threading.Semaphore(max(1, config.max_in_flight))

    def generate(self, messages) -> GenerationResult:
        payload = {
            "model": self.config.model_name,
            "messages": [{"role": m.role, "content": m.content} for m in messages],
            "temperature": self.config.temperature if self.config.temperature is not None else 0.0,
            "max_tokens": self.config.max_output_tokens,
        }
        body = json.dumps(payload).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.config.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"

        last_error: Exception | None = None
        started = time.monotonic()
        for attempt in range(self.config.max_retries + 1):
            request = urllib.request.Request(self.config.endpoint, data=body, headers=headers)
            try:
                with self._gate:
                    with self._opener(request, timeout=120) as response:
                        raw = response.read().decode("utf-8")
                return self._parse(raw, retries=attempt, started=started)
            except urllib.error.HTTPError as exc:
                detail = ""
                try:
                    detail = exc.read().decode("utf-8", errors="replace")
                except OSError:
                    pass
                if exc.code in (401, 403):
                    raise AuthenticationError(f"backend rejected credentials (HTTP {exc.code})")
                if "context_length" in detail or "maximum context length" in detail:
                    raise ContextLengthError(f"prompt exceeds the model context window: {detail[:200]}")
                if exc.code not in self.retryable_statuses:
                    raise RetriesExhaustedError(f"HTTP {exc.code}: {detail[:200]}")
                last_error = exc
            except urllib.error.URLError as exc:
                last_error = exc
            if attempt < self.config.max_retries:
                self._sleep(self.config.backoff_s * (2**attempt))
        raise RetriesExhaustedError(
            f"backend failed after {self.config.max_retries} retries: {last_error}"
        )

    def _parse(self, raw: str, retries: int, started: float) -> GenerationResult:
        data = json.loads(raw)
        text = data["choices"][0]["message"]["content"]
        usage = data.get("usage") or {}
        estimated = "prompt_tokens" not in usage or "completion_tokens" not in usage
        input_tokens = usage.get("prompt_tokens")
        output_tokens = usage.get("completion_tokens")
        if estimated:
            input_tokens = input_tokens if input_tokens is not None else 0
            output_tokens = output_tokens if output_tokens is not None else estimate_tokens(text)
        return GenerationResult(
            text=text,
            input_tokens=int(input_tokens),
            output_tokens=int(output_tokens),
            latency_ms=int((time.monotonic() - started) * 1000),
            backend_id=self.backend_id,
            tokens_estimated=estimated,
            retries=retries,
        )


def make_backend(config: BackendConfig):
    if config.kind == "scripted":
        return ScriptedBackend(config.script, backend_id=config.model_name or "scripted")
    return RemoteBackend(config)


def generate(backend, messages) -> GenerationResult:
    return backend.generate(messages)


def accumulate_cost(results, config: BackendConfig) -> dict:
    """Total tokens and cost over a result list; additive and order-independent."""
    tokens_in = sum(r.input_tokens for r in results)
    tokens_out = sum(r.output_tokens for r in results)
    cost = (
        tokens_in * config.price_per_input_token + tokens_out * config.price_per_output_token
    )
    return {"tokens_in": tokens_in, "tokens_out": tokens_out, "cost": cost}
