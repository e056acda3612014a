"""LLM clients: a scripted mock for tests and an OpenAI-compatible HTTP client."""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from collections import defaultdict
from pathlib import Path
from typing import Callable, Protocol

import httpx

from .prompts import CLARIFICATION

logger = logging.getLogger(__name__)


class ClientError(RuntimeError):
    pass


class LlmClient(Protocol):
    """Maps prompt text to completion text. Calls must be safe to repeat."""

    def complete(self, prompt: str) -> str: ...


class MockClient:
    """Scripted client.

    Each rule is ``{"match": [substrings], "completions": [...]}``. The first
    rule whose substrings all occur in the prompt answers; repeated calls with
    the same prompt walk through ``completions`` and then repeat the last one.
    A retry prompt (base prompt + clarification line) counts as a repeat of its
    base prompt, so scripted failure sequences do not depend on call order
    across different prompts.
    """

    def __init__(self, rules: list[dict] | None = None, default: str | None = None):
        self.rules = [dict(r) for r in (rules or [])]
        for i, r in enumerate(self.rules):
            if not isinstance(r.get("match"), list) or not r.get("completions"):
                raise ValueError(f"mock rule {i} needs a 'match' list and non-empty 'completions'")
        self.default = default
        self.calls: list[str] = []
        self._seen: dict[tuple[int, str], int] = defaultdict(int)
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path, default: str | None = None) -> "MockClient":
        blob = json.loads(Path(path).read_text(encoding="utf-8"))
        if isinstance(blob, list):
            return cls(blob, default)
        return cls(blob.get("rules", []), blob.get("default", default) or default)

    def complete(self, prompt: str) -> str:
        base = prompt.removesuffix(CLARIFICATION + "\n")
        with self._lock:
            self.calls.append(prompt)
            for i, rule in enumerate(self.rules):
                if all(s in prompt for s in rule["match"]):
                    k = self._seen[(i, base)]
                    self._seen[(i, base)] += 1
                    seq = rule["completions"]
                    return seq[min(k, len(seq) - 1)]
        if self.default is None:
            raise ClientError("mock client has no completion for this prompt")
        return self.default


class TokenBucket:
    """Thread-safe token bucket: ``rate`` tokens per second, burst ``capacity``."""

    def __init__(self, rate: float, capacity: float | None = None,
                 clock: Callable[[], float] = time.monotonic, sleep: Callable[[float], None] = time.sleep):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate
        self.capacity = capacity if capacity is not None else max(1.0, rate)
        self.tokens = self.capacity
        self.clock = clock
        self.sleep = sleep
        self.updated = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self.clock()
                self.tokens = min(self.capacity, self.tokens + (now - self.updated) * self.rate)
                self.updated = now
                if self.tokens >= 1.0:
                    self.tokens -= 1.0
                    return
                wait = (1.0 - self.tokens) / self.rate
            self.sleep(wait)


_TRANSIENT = {408, 409, 425, 429, 500, 502, 503, 504}


class OpenAIClient:
    """Chat-completions client for any OpenAI-compatible endpoint.

    Transport failures and transient HTTP statuses are retried with
    exponential backoff; other HTTP errors raise :class:`ClientError` at once.
    """

    def __init__(self, model: str, base_url: str, api_key_env: str = "DIALEVAL_API_KEY",
                 temperature: float = 0.0, max_tokens: int = 8, timeout: float = 30.0,
                 max_retries: int = 2, backoff: float = 1.0,
                 transport: httpx.BaseTransport | None = None, sleep: Callable[[float], None] = time.sleep):
        key = os.environ.get(api_key_env)
        if not key:
            raise ClientError(f"credential environment variable {api_key_env} is not set")
        self.model = model
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.max_retries = max_retries
        self.backoff = backoff
        self.sleep = sleep
        self._http = httpx.Client(base_url=base_url.rstrip("/"), timeout=timeout, transport=transport,
                                  headers={"Authorization": f"Bearer {key}"})

    @classmethod
    def from_config(cls, cfg, **kwargs) -> "OpenAIClient":
        return cls(cfg.model, cfg.base_url, cfg.api_key_env, cfg.temperature, cfg.max_tokens,
                   cfg.timeout, cfg.max_retries, cfg.backoff, **kwargs)

    def complete(self, prompt: str) -> str:
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        last = "no attempt made"
        for attempt in range(self.max_retries + 1):
            if attempt:
                self.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._http.post("/chat/completions", json=body)
            except httpx.HTTPError as exc:
                last = f"{type(exc).__name__}: {exc}"
                logger.warning("judge request failed (attempt %d): %s", attempt + 1, last)
                continue
            if resp.status_code in _TRANSIENT:
                last = f"HTTP {resp.status_code}"
                logger.warning("judge request got %s (attempt %d)", last, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise ClientError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise ClientError(f"malformed completion payload: {exc}") from exc
        raise ClientError(f"giving up after {self.max_retries + 1} attempts: {last}")

    def close(self) -> None:
        self._http.close()


def make_client(cfg, base_dir: Path | None = None) -> LlmClient:
    """Build the client named by a JudgeConfig."""
    if cfg.client == "mock":
        if cfg.mock_rules:
            path = Path(cfg.mock_rules)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            return MockClient.from_file(path, cfg.mock_default or None)
        return MockClient([], cfg.mock_default or None)
    return OpenAIClient.from_config(cfg)
