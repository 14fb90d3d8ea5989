"""Chat-completion and embedding providers behind one interface.

All network I/O in the pipeline lives here. Live providers speak vendor
wire formats over HTTP with retry/backoff; the replay provider serves
recorded transcripts for fully offline, bit-deterministic runs; the mock
providers exist for tests and demos.

Credentials come from environment variables only (one per provider), never
from config files.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import random
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import requests

from .corpus import MATCH

logger = logging.getLogger(__name__)

OK = "ok"
RATE_LIMITED = "rate_limited"
PROVIDER_ERROR = "provider_error"
TIMEOUT = "timeout"

DEFAULT_TIMEOUT_S = 60.0
DEFAULT_MAX_RETRIES = 5
DEFAULT_BACKOFF_BASE_S = 1.0
DEFAULT_BACKOFF_FACTOR = 2.0


class ConfigError(ValueError):
    """Provider configuration is unusable (missing credentials, bad kind...)."""


class ProviderError(RuntimeError):
    """A provider call failed in a way the caller cannot ignore."""


class TranscriptMismatchError(RuntimeError):
    """A replayed request no longer hashes to its recorded value."""


class EmptyTextError(ValueError):
    """Embedding requested for empty text."""


@dataclass(frozen=True)
class GenerationParams:
    """Sampling settings sent with every completion request.

    temperature/top_p of None means "use the provider's default".
    """

    model_name: str
    max_new_tokens: int = 400
    temperature: float | None = None
    top_p: float | None = None

    def __post_init__(self) -> None:
        if self.max_new_tokens <= 0:
            raise ValueError("max_new_tokens must be positive")
        if self.temperature is not None and self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.top_p is not None and not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "model_name": self.model_name,
            "max_new_tokens": self.max_new_tokens,
            "temperature": self.temperature,
            "top_p": self.top_p,
        }


_PARAM_PRESETS: dict[str, dict] = {
    # llama-style runs pin sampling; mistral-style pins only the token cap;
    # api_default leaves sampling to the provider.
    "llama": {"max_new_tokens": 400, "temperature": 0.6, "top_p": 0.9},
    "mistral": {"max_new_tokens": 400},
    "api_default": {"max_new_tokens": 400},
}


def preset_params(preset: str, model_name: str) -> GenerationParams:
    try:
        overrides = _PARAM_PRESETS[preset]
    except KeyError:
        raise ConfigError(f"unknown params preset {preset!r}") from None
    return GenerationParams(model_name=model_name, **overrides)


@dataclass(frozen=True)
class PromptRequest:
    request_id: str
    system_text: str
    user_text: str
    params: GenerationParams


@dataclass(frozen=True)
class ProviderResponse:
    raw_text: str
    latency_ms: int
    status: str  # ok | rate_limited | provider_error | timeout


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    model_name: str

    @property
    def dim(self) -> int:
        return len(self.values)

    def __post_init__(self) -> None:
        if not self.values:
            raise ValueError("embedding must have at least one dimension")
        if any(not math.isfinite(v) for v in self.values):
            raise ValueError("embedding entries must be finite")


def request_sha256(req: PromptRequest) -> str:
    """Hash covering the prompt texts and generation params.

    Any prompt or parameter change invalidates stale transcripts.
    """
    payload = json.dumps(
        {
            "system_text": req.system_text,
            "user_text": req.user_text,
            "params": req.params.to_dict(),
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class RetryPolicy:
    max_retries: int = DEFAULT_MAX_RETRIES
    backoff_base_s: float = DEFAULT_BACKOFF_BASE_S
    backoff_factor: float = DEFAULT_BACKOFF_FACTOR
    sleep: Callable[[float], None] = time.sleep

    def delay(self, attempt: int) -> float:
        return self.backoff_base_s * self.backoff_factor**attempt


class ChatProvider:
    """Base chat provider: retry loop over a single-attempt implementation."""

    def __init__(
        self,
        name: str,
        params: GenerationParams,
        retry: RetryPolicy | None = None,
        context_chars: int | None = None,
    ):
        self.name = name
        self.params = params
        self.retry = retry or RetryPolicy()
        self.context_chars = context_chars

    def complete(self, req: PromptRequest) -> ProviderResponse:
        """Run one request with exponential backoff on rate limits/timeouts.

        Returns the final response verbatim; the terminal status is kept as
        observed so callers can distinguish exhaustion causes.
        """
        response = self._attempt(req)
        for attempt in range(self.retry.max_retries - 1):
            if response.status not in (RATE_LIMITED, TIMEOUT):
                return response
            delay = self.retry.delay(attempt)
            logger.warning(
                "request %s got %s, retrying in %.1fs (attempt %d/%d)",
                req.request_id, response.status, delay, attempt + 2, self.retry.max_retries,
            )
            self.retry.sleep(delay)
            response = self._attempt(req)
        return response

    def _attempt(self, req: PromptRequest) -> ProviderResponse:
        raise NotImplementedError


class OpenAIChatProvider(ChatProvider):
    """OpenAI-style /chat/completions wire format."""

    def __init__(
        self,
        endpoint: str,
        params: GenerationParams,
        api_key_env: str = "OPENAI_API_KEY",
        timeout_s: float = DEFAULT_TIMEOUT_S,
        session: requests.Session | None = None,
        name: str | None = None,
        **kwargs,
    ):
        super().__init__(name or params.model_name, params, **kwargs)
        key = os.environ.get(api_key_env, "").strip()
        if not key:
            raise ConfigError(f"missing credentials: set {api_key_env}")
        self._endpoint = endpoint.rstrip("/")
        self._key = key
        self._timeout_s = timeout_s
        self._session = session or requests.Session()

    def _attempt(self, req: PromptRequest) -> ProviderResponse:
        payload: dict = {
            "model": req.params.model_name,
            "messages": [
                {"role": "system", "content": req.system_text},
                {"role": "user", "content": req.user_text},
            ],
            "max_tokens": req.params.max_new_tokens,
        }
        if req.params.temperature is not None:
            payload["temperature"] = req.params.temperature
        if req.params.top_p is not None:
            payload["top_p"] = req.params.top_p
        started = time.monotonic()

        def elapsed_ms() -> int:
            return int((time.monotonic() - started) * 1000)

        try:
            http = self._session.post(
                f"{self._endpoint}/chat/completions",
                headers={"Authorization": f"Bearer {self._key}"},
                json=payload,
                timeout=self._timeout_s,
            )
        except requests.Timeout:
            return ProviderResponse("", elapsed_ms(), TIMEOUT)
        except requests.RequestException as exc:
            logger.warning("request %s transport error: %s", req.request_id, exc)
            return ProviderResponse("", elapsed_ms(), PROVIDER_ERROR)
        if http.status_code == 429:
            return ProviderResponse("", elapsed_ms(), RATE_LIMITED)
        if http.status_code >= 400:
            logger.warning("request %s got HTTP %d", req.request_id, http.status_code)
            return ProviderResponse("", elapsed_ms(), PROVIDER_ERROR)
        try:
            text = http.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            return ProviderResponse("", elapsed_ms(), PROVIDER_ERROR)
        return ProviderResponse(text if text is not None else "", elapsed_ms(), OK)


class GeminiChatProvider(ChatProvider):
    """Gemini-style generateContent wire format."""

    def __init__(
        self,
        endpoint: str,
        params: GenerationParams,
        api_key_env: str = "GEMINI_API_KEY",
        timeout_s: float = DEFAULT_TIMEOUT_S,
        session: requests.Session | None = None,
        name: str | None = None,
        **kwargs,
    ):
        super().__init__(name or params.model_name, params, **kwargs)
        key = os.environ.get(api_key_env, "").strip()
        if not key:
            raise ConfigError(f"missing credentials: set {api_key_env}")
        self._endpoint = endpoint.rstrip("/")
        self._key = key
        self._timeout_s = timeout_s
        self._session = session or requests.Session()

    def _attempt(self, req: PromptRequest) -> ProviderResponse:
        generation_config: dict = {"maxOutputTokens": req.params.max_new_tokens}
        if req.params.temperature is not None:
            generation_config["temperature"] = req.params.temperature
        if req.params.top_p is not None:
            generation_config["topP"] = req.params.top_p
        payload = {
            "system_instruction": {"parts": [{"text": req.system_text}]},
            "contents": [{"role": "user", "parts": [{"text": req.user_text}]}],
            "generationConfig": generation_config,
        }
        url = f"{self._endpoint}/models/{req.params.model_name}:generateContent"
        started = time.monotonic()

        def elapsed_ms() -> int:
            return int((time.monotonic() - started) * 1000)

        try:
            http = self._session.post(
                url,
                params={"key": self._key},
                json=payload,
                timeout=self._timeout_s,
            )
        except requests.Timeout:
            return ProviderResponse("", elapsed_ms(), TIMEOUT)
        except requests.RequestException as exc:
            logger.warning("request %s transport error: %s", req.request_id, exc)
            return ProviderResponse("", elapsed_ms(), PROVIDER_ERROR)
        if http.status_code == 429:
            return ProviderResponse("", elapsed_ms(), RATE_LIMITED)
        if http.status_code >= 400:
            logger.warning("request %s got HTTP %d", req.request_id, http.status_code)
            return ProviderResponse("", elapsed_ms(), PROVIDER_ERROR)
        try:
            parts = http.json()["candidates"][0]["content"]["parts"]
            text = "".join(part.get("text", "") for part in parts)
        except (ValueError, KeyError, IndexError, TypeError):
            return ProviderResponse("", elapsed_ms(), PROVIDER_ERROR)
        return ProviderResponse(text, elapsed_ms(), OK)


class EchoGoldChatProvider(ChatProvider):
    """Oracle mock: answers every request with its pair's gold label word."""

    def __init__(
        self,
        gold_labels: Mapping[str, str],
        label_words: tuple[str, str] = ("yes", "no"),
        params: GenerationParams | None = None,
        **kwargs,
    ):
        super().__init__("echo-gold", params or GenerationParams("echo-gold"), **kwargs)
        self._gold_labels = dict(gold_labels)
        self._positive_word, self._negative_word = label_words

    def _attempt(self, req: PromptRequest) -> ProviderResponse:
        label = self._gold_labels.get(req.request_id)
        if label is None:
            return ProviderResponse("", 0, PROVIDER_ERROR)
        word = self._positive_word if label == MATCH else self._negative_word
        return ProviderResponse(word, 0, OK)


class ScriptedChatProvider(ChatProvider):
    """Test double that pops canned responses in order (thread-safe)."""

    def __init__(
        self,
        script: Sequence[ProviderResponse],
        params: GenerationParams | None = None,
        **kwargs,
    ):
        super().__init__("scripted", params or GenerationParams("scripted"), **kwargs)
        self._script = list(script)
        self._lock = threading.Lock()
        self.attempts = 0

    def _attempt(self, req: PromptRequest) -> ProviderResponse:
        with self._lock:
            self.attempts += 1
            if not self._script:
                return ProviderResponse("", 0, PROVIDER_ERROR)
            return self._script.pop(0)


class ReplayChatProvider(ChatProvider):
    """Serve recorded responses; never touches the network.

    Lookups verify the stored request hash so any prompt or parameter
    change surfaces as TranscriptMismatchError instead of a silent stale
    answer. Unknown request ids are a cache miss (provider_error).
    """

    def __init__(
        self,
        transcript_path: str | Path,
        params: GenerationParams,
        name: str = "replay",
        **kwargs,
    ):
        super().__init__(name, params, **kwargs)
        path = Path(transcript_path)
        if not path.exists():
            raise ConfigError(f"transcript not found: {path}")
        self._by_id: dict[str, dict] = {}
        for entry in load_transcript(path):
            self._by_id[entry["request_id"]] = entry

    def complete(self, req: PromptRequest) -> ProviderResponse:
        entry = self._by_id.get(req.request_id)
        if entry is None:
            return ProviderResponse("", 0, PROVIDER_ERROR)
        if entry["request_sha256"] != request_sha256(req):
            raise TranscriptMismatchError(
                f"request {req.request_id!r} does not match its recorded hash; "
                "the prompt or params changed since recording"
            )
        return ProviderResponse(entry["raw_text"], entry["latency_ms"], entry["status"])

    def _attempt(self, req: PromptRequest) -> ProviderResponse:  # pragma: no cover
        return self.complete(req)


def transcript_entry(req: PromptRequest, resp: ProviderResponse) -> dict:
    return {
        "request_id": req.request_id,
        "request_sha256": request_sha256(req),
        "raw_text": resp.raw_text,
        "latency_ms": resp.latency_ms,
        "status": resp.status,
    }


def load_transcript(path: str | Path) -> list[dict]:
    entries = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                entries.append(json.loads(line))
    return entries


def write_transcript(entries: Iterable[dict], path: str | Path) -> None:
    """Persist transcript entries sorted by request id (stable files)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ordered = sorted(entries, key=lambda e: e["request_id"])
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for entry in ordered:
            handle.write(json.dumps(entry, ensure_ascii=False, sort_keys=True))
            handle.write("\n")


class Embedder:
    """Base embedder enforcing the nonempty-text contract."""

    model_name: str = ""

    def embed(self, text: str) -> EmbeddingVector:
        if not text:
            raise EmptyTextError("cannot embed empty text")
        return self._embed(text)

    def _embed(self, text: str) -> EmbeddingVector:
        raise NotImplementedError


class OpenAIEmbedder(Embedder):
    """OpenAI-style /embeddings wire format."""

    def __init__(
        self,
        endpoint: str,
        model_name: str,
        api_key_env: str = "OPENAI_API_KEY",
        timeout_s: float = DEFAULT_TIMEOUT_S,
        session: requests.Session | None = None,
    ):
        key = os.environ.get(api_key_env, "").strip()
        if not key:
            raise ConfigError(f"missing credentials: set {api_key_env}")
        self.model_name = model_name
        self._endpoint = endpoint.rstrip("/")
        self._key = key
        self._timeout_s = timeout_s
        self._session = session or requests.Session()

    def _embed(self, text: str) -> EmbeddingVector:
        try:
            http = self._session.post(
                f"{self._endpoint}/embeddings",
                headers={"Authorization": f"Bearer {self._key}"},
                json={"model": self.model_name, "input": text},
                timeout=self._timeout_s,
            )
        except requests.RequestException as exc:
            raise ProviderError(f"embedding request failed: {exc}") from exc
        if http.status_code >= 400:
            raise ProviderError(f"embedding request got HTTP {http.status_code}")
        try:
            values = http.json()["data"][0]["embedding"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed embedding response: {exc}") from exc
        return EmbeddingVector(values=tuple(float(v) for v in values), model_name=self.model_name)


class MockEmbedder(Embedder):
    """Deterministic embeddings seeded from a hash of the text."""

    def __init__(self, model_name: str = "mock-embedder", dim: int = 32):
        self.model_name = model_name
        self._dim = dim

    def _embed(self, text: str) -> EmbeddingVector:
        digest = hashlib.sha256(f"{self.model_name}:{text}".encode("utf-8")).digest()
        rng = random.Random(int.from_bytes(digest[:8], "big"))
        values = tuple(rng.gauss(0.0, 1.0) for _ in range(self._dim))
        return EmbeddingVector(values=values, model_name=self.model_name)


class SeparableEmbedder(Embedder):
    """Analytic fixture embeddings with guaranteed cosine margins.

    Each text vector is cos(angle) along its topic axis plus sin(angle)
    along a per-text axis, so same-topic pairs score cos(angle)^2 (0.933
    at the default 15 degrees) and cross-topic pairs score exactly 0.
    """

    def __init__(
        self,
        topics: Mapping[str, str],
        model_name: str = "separable-mock",
        angle_deg: float = 15.0,
    ):
        self.model_name = model_name
        texts = sorted(topics)
        topic_names = sorted(set(topics.values()))
        self._dim = len(topic_names) + len(texts)
        topic_axis = {name: i for i, name in enumerate(topic_names)}
        self._vectors: dict[str, tuple[float, ...]] = {}
        cos_a = math.cos(math.radians(angle_deg))
        sin_a = math.sin(math.radians(angle_deg))
        for j, text in enumerate(texts):
            values = [0.0] * self._dim
            values[topic_axis[topics[text]]] = cos_a
            values[len(topic_names) + j] = sin_a
            self._vectors[text] = tuple(values)

    def _embed(self, text: str) -> EmbeddingVector:
        try:
            values = self._vectors[text]
        except KeyError:
            raise ConfigError(f"text not present in the separable fixture: {text[:40]!r}") from None
        return EmbeddingVector(values=values, model_name=self.model_name)


class CachingEmbedder(Embedder):
    """Wrap an embedder with a (model, text-hash)-keyed in-memory cache."""

    def __init__(self, inner: Embedder):
        self._inner = inner
        self._cache: dict[tuple[str, str], EmbeddingVector] = {}
        self._lock = threading.Lock()

    @property
    def model_name(self) -> str:  # type: ignore[override]
        return self._inner.model_name

    def _embed(self, text: str) -> EmbeddingVector:
        key = (self._inner.model_name, hashlib.sha256(text.encode("utf-8")).hexdigest())
        with self._lock:
            cached = self._cache.get(key)
        if cached is not None:
            return cached
        vector = self._inner.embed(text)
        with self._lock:
            self._cache[key] = vector
        return vector
