"""Chat-completion and embedding provider contracts.

Ships an HTTP backend speaking the common chat-completions wire format,
a deterministic scripted backend for offline runs and tests, an HTTP
embedding provider, and a hashing bag-of-words fallback embedder so the
whole system works without network access.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

from .domain import Message

AUTH_ENV_VAR = "THINKREPAIR_API_KEY"
DEFAULT_RETRY_CAP = 3
DEFAULT_BACKOFF_BASE = 1.0
FALLBACK_DIMENSION = 256

_WORD_RE = re.compile(r"\w+")


class TransportError(RuntimeError):
    """The request could not be delivered, even after retries."""


class ProviderRejectionError(RuntimeError):
    """The provider answered but refused the request."""

    def __init__(self, message: str, status: int | None = None, body: str = ""):
        super().__init__(message)
        self.status = status
        self.body = body


class TokenBudgetError(ProviderRejectionError):
    """The rendered prompt exceeds the backend's context window."""


@dataclass
class GenerationParams:
    """Decoding settings sent with every chat completion.

    ``max_prompt_chars`` declares the backend's input budget; fixing prompts
    are trimmed to it by dropping exemplars (collection prompts never are).
    """

    model_id: str = ""
    temperature: float = 1.0  # sampling temperature; 1.0 diversifies patches
    max_output_tokens: int = 1024
    request_timeout: float = 60.0
    max_prompt_chars: int | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass
class ChatSession:
    """One independent conversation; no state crosses session boundaries."""

    session_id: str
    messages: list[Message] = field(default_factory=list)

    def append(self, message: Message) -> None:
        if message.role == "assistant" and (
            not self.messages or self.messages[-1].role != "user"
        ):
            raise ValueError("assistant turns may only follow user turns")
        self.messages.append(message)

    def extend(self, messages: Sequence[Message]) -> None:
        for message in messages:
            self.append(message)

    @property
    def assistant_turns(self) -> int:
        return sum(1 for m in self.messages if m.role == "assistant")


class ChatBackend(Protocol):
    def generate(self, session: ChatSession, params: GenerationParams) -> str:
        """Return assistant text for the session's transcript."""


def chat_complete(
    backend: ChatBackend, session: ChatSession, params: GenerationParams
) -> str:
    """Run one completion and append the assistant turn to the transcript."""
    if not session.messages or session.messages[-1].role != "user":
        raise ValueError(f"{session.session_id}: transcript must end with a user turn")
    text = backend.generate(session, params)
    session.append(Message("assistant", text))
    return text


class HttpChatBackend:
    """Chat-completions client: POST {model, temperature, max_tokens, messages}.

    Auth comes from a bearer token in ``auth_env_var``. Transport failures and
    retryable statuses (429/5xx) back off exponentially up to ``retry_cap``
    additional attempts; other non-200 responses raise immediately.
    """

    def __init__(
        self,
        url: str,
        auth_env_var: str = AUTH_ENV_VAR,
        retry_cap: int = DEFAULT_RETRY_CAP,
        backoff_base: float = DEFAULT_BACKOFF_BASE,
        send: Callable[[str, dict, dict, float], tuple[int, str]] | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.url = url
        self.auth_env_var = auth_env_var
        self.retry_cap = retry_cap
        self.backoff_base = backoff_base
        self._send = send or _httpx_send
        self._sleep = sleep

    def generate(self, session: ChatSession, params: GenerationParams) -> str:
        payload = {
            "model": params.model_id,
            "temperature": params.temperature,
            "max_tokens": params.max_output_tokens,
            "messages": [m.to_dict() for m in session.messages],
        }
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.auth_env_var)
        if token:
            headers["Authorization"] = f"Bearer {token}"

        last_error: Exception | None = None
        for attempt in range(self.retry_cap + 1):
            if attempt:
                self._sleep(self.backoff_base * 2 ** (attempt - 1))
            try:
                status, body = self._send(
                    self.url, payload, headers, params.request_timeout
                )
            except Exception as exc:  # transport-level failure
                last_error = exc
                continue
            if status == 200:
                return _extract_content(body)
            if status == 429 or status >= 500:
                last_error = ProviderRejectionError(
                    f"retryable status {status}", status=status, body=body
                )
                continue
            lowered = body.lower()
            if "context" in lowered and ("token" in lowered or "length" in lowered):
                raise TokenBudgetError(
                    f"prompt rejected for length (status {status})",
                    status=status,
                    body=body,
                )
            raise ProviderRejectionError(
                f"provider rejected request (status {status})", status=status, body=body
            )
        raise TransportError(
            f"chat completion failed after {self.retry_cap + 1} attempts: {last_error}"
        )


def _httpx_send(
    url: str, payload: dict, headers: dict, timeout: float
) -> tuple[int, str]:
    import httpx

    try:
        response = httpx.post(url, json=payload, headers=headers, timeout=timeout)
    except httpx.HTTPError as exc:
        raise TransportError(str(exc)) from exc
    return response.status_code, response.text


def _extract_content(body: str) -> str:
    try:
        data = json.loads(body)
        return data["choices"][0]["message"]["content"]
    except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
        raise ProviderRejectionError(
            f"malformed completion response: {exc}", status=200, body=body
        ) from exc


class ScriptedChatBackend:
    """Deterministic mock keyed on ``functionId/sessionIdx/interactionIdx``.

    The session id carries ``functionId/sessionIdx``; the interaction index is
    inferred from the number of assistant turns already in the transcript.
    A ``"*"`` entry provides a default response for unscripted keys; with no
    default, an unscripted key is a provider rejection.
    """

    def __init__(self, script: dict[str, str] | None = None, default: str | None = None):
        self.script = dict(script or {})
        self.default = default if default is not None else self.script.pop("*", None)
        self.calls = 0
        self.requested_keys: list[str] = []
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedChatBackend":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def generate(self, session: ChatSession, params: GenerationParams) -> str:
        key = f"{session.session_id}/{session.assistant_turns + 1}"
        with self._lock:  # bugs may be fixed concurrently
            self.calls += 1
            self.requested_keys.append(key)
        if key in self.script:
            return self.script[key]
        if self.default is not None:
            return self.default
        raise ProviderRejectionError(f"mock script has no response for {key}")


class EmbeddingProvider(Protocol):
    provider_id: str
    dimension: int

    def embed_batch(self, texts: Sequence[str]) -> list[list[float]]:
        """Return one vector of length ``dimension`` per input text."""


def embed(provider: EmbeddingProvider, text: str) -> list[float]:
    """Embed a single non-empty text."""
    if not text:
        raise ValueError("cannot embed empty text")
    vector = provider.embed_batch([text])[0]
    if len(vector) != provider.dimension:
        raise ValueError(
            f"{provider.provider_id}: expected dimension {provider.dimension},"
            f" got {len(vector)}"
        )
    return vector


def hash_bucket(token: str, dimension: int) -> int:
    """Stable bucket index for a token (sha1-based, hash-seed independent)."""
    digest = hashlib.sha1(token.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % dimension


class HashingEmbedder:
    """Offline fallback: token-hash bag of words, L2-normalized.

    Deterministic across processes, so scripted runs are reproducible.
    """

    def __init__(self, dimension: int = FALLBACK_DIMENSION):
        if dimension <= 0:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self.provider_id = f"hash-bow-{dimension}"

    def embed_batch(self, texts: Sequence[str]) -> list[list[float]]:
        return [self._embed_one(text) for text in texts]

    def _embed_one(self, text: str) -> list[float]:
        counts = Counter(
            hash_bucket(token, self.dimension)
            for token in _WORD_RE.findall(text.lower())
        )
        if not counts:
            # No tokens at all: a fixed unit vector keeps the norm invariant.
            counts = Counter({0: 1})
        norm = math.sqrt(sum(c * c for c in counts.values()))
        vector = [0.0] * self.dimension
        for bucket, count in counts.items():
            vector[bucket] = count / norm
        return vector


class HttpEmbeddingProvider:
    """Embedding client: POST {model, input} -> {data: [{embedding}]}."""

    def __init__(
        self,
        url: str,
        provider_id: str,
        dimension: int,
        auth_env_var: str = AUTH_ENV_VAR,
        request_timeout: float = 60.0,
        send: Callable[[str, dict, dict, float], tuple[int, str]] | None = None,
    ):
        self.url = url
        self.provider_id = provider_id
        self.dimension = dimension
        self.auth_env_var = auth_env_var
        self.request_timeout = request_timeout
        self._send = send or _httpx_send

    def embed_batch(self, texts: Sequence[str]) -> list[list[float]]:
        payload = {"model": self.provider_id, "input": list(texts)}
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.auth_env_var)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        status, body = self._send(self.url, payload, headers, self.request_timeout)
        if status != 200:
            raise ProviderRejectionError(
                f"embedding request failed (status {status})", status=status, body=body
            )
        try:
            data = json.loads(body)
            vectors = [entry["embedding"] for entry in data["data"]]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ProviderRejectionError(
                f"malformed embedding response: {exc}", status=200, body=body
            ) from exc
        for vector in vectors:
            if len(vector) != self.dimension:
                raise ValueError(
                    f"{self.provider_id}: expected dimension {self.dimension},"
                    f" got {len(vector)}"
                )
        return vectors
