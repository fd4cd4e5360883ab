"""Chat-completion and embedding clients.

``HttpChatBackend`` speaks the common ``/v1/chat/completions`` wire shape;
``HttpEmbeddingBackend`` speaks the ``/api/embeddings`` shape. The scripted
chat backend and the 3-gram hash embedder are deterministic stand-ins used
throughout the test and experiment suites.
"""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import requests

from .errors import (
    BackendUnavailable,
    DimensionMismatch,
    MalformedResponse,
    NoMatch,
)

logger = logging.getLogger(__name__)


@dataclass
class ChatMessage:
    role: str  # system | user | assistant
    content: str

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"bad role: {self.role!r}")
        if self.role in ("system", "user") and not self.content:
            raise ValueError(f"{self.role} message must have content")


@dataclass
class BackendConfig:
    base_url: str = "http://localhost:11434"
    model: str = "llama3.1:70b"
    timeout: float = 120.0
    max_retries: int = 2
    api_key: str | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


def _retrying(config: BackendConfig, call, sleep=time.sleep):
    last = None
    for attempt in range(config.max_retries + 1):
        try:
            return call()
        except (requests.RequestException, OSError) as exc:
            last = exc
            logger.warning("backend call failed (attempt %d): %s", attempt + 1, exc)
            if attempt < config.max_retries:
                sleep(2**attempt)  # 1s, 2s, ...
    raise BackendUnavailable(f"retries exhausted: {last}") from last


class HttpChatBackend:
    def __init__(self, config: BackendConfig, sleep=time.sleep):
        self.config = config
        self._sleep = sleep

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        return headers

    def chat_complete(self, messages: list[ChatMessage], max_tokens: int = 2048) -> str:
        if not messages:
            raise ValueError("messages must be non-empty")
        body = {
            "model": self.config.model,
            "messages": [{"role": m.role, "content": m.content} for m in messages],
            "max_tokens": max_tokens,
            "temperature": 0,
        }

        def call():
            resp = requests.post(
                f"{self.config.base_url}/v1/chat/completions",
                json=body,
                headers=self._headers(),
                timeout=self.config.timeout,
            )
            if resp.status_code >= 500:
                raise requests.RequestException(f"server error {resp.status_code}")
            resp.raise_for_status()
            return resp.json()

        data = _retrying(self.config, call, self._sleep)
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"unexpected chat reply shape: {exc}") from exc


class HttpEmbeddingBackend:
    def __init__(self, config: BackendConfig, dim: int = 768, sleep=time.sleep):
        self.config = config
        self.dim = dim
        self._sleep = sleep

    def embed(self, text: str) -> list[float]:
        if not text:
            raise ValueError("text must be non-empty")
        body = {"model": self.config.model, "prompt": text}
        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"

        def call():
            resp = requests.post(
                f"{self.config.base_url}/api/embeddings",
                json=body,
                headers=headers,
                timeout=self.config.timeout,
            )
            if resp.status_code >= 500:
                raise requests.RequestException(f"server error {resp.status_code}")
            resp.raise_for_status()
            return resp.json()

        data = _retrying(self.config, call, self._sleep)
        try:
            vec = [float(v) for v in data["embedding"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedResponse(f"unexpected embedding reply shape: {exc}") from exc
        if len(vec) != self.dim:
            raise DimensionMismatch(f"server returned dim {len(vec)}, expected {self.dim}")
        return vec


class HashEmbedder:
    """Deterministic embedding mock: signed feature hashing of character
    3-grams, L2-normalized. Texts sharing grams land near each other."""

    def __init__(self, dim: int = 768):
        if dim < 2:
            raise ValueError("dim must be >= 2")
        self.dim = dim

    def _grams(self, text: str):
        text = text.lower()
        if len(text) < 3:
            return [text]
        return [text[i : i + 3] for i in range(len(text) - 2)]

    def embed(self, text: str) -> list[float]:
        if not text:
            raise ValueError("text must be non-empty")
        vec = np.zeros(self.dim, dtype=np.float64)
        for gram in self._grams(text):
            digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
            bucket = int.from_bytes(digest[:4], "big") % self.dim
            sign = 1.0 if digest[4] & 1 else -1.0
            vec[bucket] += sign
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            # All grams cancelled; nudge a text-dependent bucket instead.
            vec[len(text) % self.dim] = 1.0
            norm = 1.0
        return (vec / norm).tolist()


@dataclass
class ScriptRule:
    match: str  # substring matched against the last user message
    reply: str


class ScriptedChatBackend:
    """Replies from a fixed rule list; first substring match wins."""

    def __init__(self, rules: list[ScriptRule], default: str | None = None):
        self.rules = rules
        self.default = default
        self.calls: list[list[ChatMessage]] = []

    def chat_complete(self, messages: list[ChatMessage], max_tokens: int = 2048) -> str:
        if not messages:
            raise ValueError("messages must be non-empty")
        self.calls.append(list(messages))
        haystack = "\n".join(m.content for m in messages)
        for rule in self.rules:
            if rule.match in haystack:
                return rule.reply
        if self.default is not None:
            return self.default
        raise NoMatch("no script rule matched and no default configured")


class FailingChatBackend:
    """Always raises; exercises fallback paths."""

    def chat_complete(self, messages, max_tokens: int = 2048) -> str:
        raise BackendUnavailable("scripted failure")


class FnChatBackend:
    """Adapts a plain function ``prompt_text -> reply`` to the chat surface."""

    def __init__(self, fn):
        self.fn = fn
        self.calls: list[list[ChatMessage]] = []

    def chat_complete(self, messages, max_tokens: int = 2048) -> str:
        self.calls.append(list(messages))
        return self.fn("\n".join(m.content for m in messages))
