"""HTTP client for chat-completions endpoints that expose token log-probabilities.

Adds a persistent content-addressed response cache, bounded retries with
exponential backoff, and a token-bucket rate limit so batch scoring stays
polite to hosted APIs. With a warm cache a whole benchmark run makes zero
network calls.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import requests

try:
    import fcntl
except ImportError:  # non-POSIX; appends are then best-effort
    fcntl = None

DEFAULT_BASE_URL = "https://api.openai.com/v1"
DEFAULT_MODEL = "gpt-4o-mini"

ENV_API_KEY = ("SEMSEARCH_API_KEY", "OPENAI_API_KEY")
ENV_BASE_URL = ("SEMSEARCH_BASE_URL", "OPENAI_BASE_URL")
ENV_MODEL = ("SEMSEARCH_MODEL",)


class GatewayError(Exception):
    """Base class for gateway failures."""


class MissingCredentialError(GatewayError):
    pass


class LogprobsUnsupportedError(GatewayError):
    """The endpoint answered but returned no per-token log-probabilities."""


class RetryExhaustedError(GatewayError):
    pass


class MalformedResponseError(GatewayError):
    pass


@dataclass(frozen=True)
class TokenLogprobs:
    """Ordered (token_text, natural-log probability) pairs of one completion."""

    tokens: tuple[tuple[str, float], ...]

    def __post_init__(self):
        for text, lp in self.tokens:
            if lp > 0.0:
                raise ValueError(f"logprob for token {text!r} is positive ({lp})")

    def values(self) -> tuple[float, ...]:
        return tuple(lp for _, lp in self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class CompletionRequest:
    system_text: str
    user_text: str
    model: str = DEFAULT_MODEL
    temperature: float = 0.0
    max_tokens: int = 64
    logprobs_requested: bool = True

    def __post_init__(self):
        if not self.logprobs_requested:
            raise ValueError("logprobs_requested must stay enabled; scoring needs token logprobs")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be positive, got {self.max_tokens}")


@dataclass(frozen=True)
class CompletionResult:
    answer_text: str
    token_logprobs: TokenLogprobs
    model_echo: str
    latency_ms: float


def request_digest(model: str, temperature: float, system_text: str, user_text: str) -> str:
    """Stable content digest; identical request content yields identical keys."""
    payload = json.dumps(
        {"model": model, "temperature": temperature, "system": system_text, "user": user_text},
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def embedding_digest(model: str, text: str) -> str:
    payload = json.dumps(
        {"embed_model": model, "text": text}, sort_keys=True, separators=(",", ":")
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _result_to_payload(result: CompletionResult) -> dict:
    return {
        "answer_text": result.answer_text,
        "tokens": [[t, lp] for t, lp in result.token_logprobs.tokens],
        "model_echo": result.model_echo,
        "latency_ms": result.latency_ms,
    }


def _payload_to_result(payload: dict) -> CompletionResult:
    return CompletionResult(
        answer_text=payload["answer_text"],
        token_logprobs=TokenLogprobs(tuple((t, float(lp)) for t, lp in payload["tokens"])),
        model_echo=payload["model_echo"],
        latency_ms=float(payload["latency_ms"]),
    )


class ResponseCache:
    """Append-only JSONL cache keyed by content digest.

    Each line is one entry; appends take an exclusive file lock so concurrent
    writers cannot interleave. A torn trailing line (crashed writer) is
    skipped on load, so prior entries are never corrupted. An unwritable path
    degrades to in-memory caching with a warning.
    """

    def __init__(self, path: str | Path | None = None):
        self._entries: dict[str, dict] = {}
        self._lock = threading.Lock()
        self._path: Path | None = None
        if path is not None:
            p = Path(path)
            try:
                p.parent.mkdir(parents=True, exist_ok=True)
                if p.exists():
                    self._load(p)
                else:
                    p.touch()
                self._path = p
            except OSError as exc:
                warnings.warn(f"cache path {p} is not writable ({exc}); using in-memory cache only")

    def _load(self, path: Path) -> None:
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    entry = json.loads(line)
                    self._entries[entry["key"]] = entry["value"]
                except (json.JSONDecodeError, KeyError, TypeError):
                    continue  # torn or foreign line; ignore

    @property
    def path(self) -> Path | None:
        return self._path

    def __len__(self) -> int:
        return len(self._entries)

    def lookup(self, key: str) -> dict | None:
        with self._lock:
            return self._entries.get(key)

    def store(self, key: str, value: dict, created_at: float | None = None) -> None:
        line = json.dumps(
            {"key": key, "created_at": created_at if created_at is not None else time.time(), "value": value},
            separators=(",", ":"),
        )
        with self._lock:
            self._entries[key] = value
            if self._path is None:
                return
            try:
                with open(self._path, "a", encoding="utf-8") as fh:
                    if fcntl is not None:
                        fcntl.flock(fh.fileno(), fcntl.LOCK_EX)
                    try:
                        fh.write(line + "\n")
                        fh.flush()
                    finally:
                        if fcntl is not None:
                            fcntl.flock(fh.fileno(), fcntl.LOCK_UN)
            except OSError as exc:
                warnings.warn(f"cache append failed ({exc}); entry kept in memory only")
                self._path = None


class TokenBucket:
    """Simple token bucket; acquire() blocks until a request token is available."""

    def __init__(self, rate_per_second: float, capacity: int):
        self._rate = max(rate_per_second, 1e-9)
        self._capacity = max(capacity, 1)
        self._tokens = float(self._capacity)
        self._stamp = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(self._capacity, self._tokens + (now - self._stamp) * self._rate)
                self._stamp = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self._rate
            time.sleep(wait)


@dataclass
class GatewayConfig:
    base_url: str = DEFAULT_BASE_URL
    api_key: str | None = None
    model: str = DEFAULT_MODEL
    timeout_s: float = 30.0
    max_attempts: int = 5
    backoff_base_s: float = 0.5
    backoff_cap_s: float = 30.0
    max_in_flight: int = 4
    requests_per_second: float = 4.0
    burst: int = 4

    @classmethod
    def from_env(cls, **overrides) -> "GatewayConfig":
        def first_env(names):
            for name in names:
                value = os.environ.get(name)
                if value:
                    return value
            return None

        cfg = cls(
            base_url=first_env(ENV_BASE_URL) or DEFAULT_BASE_URL,
            api_key=first_env(ENV_API_KEY),
            model=first_env(ENV_MODEL) or DEFAULT_MODEL,
        )
        for key, value in overrides.items():
            if value is not None:
                setattr(cfg, key, value)
        return cfg


def _backoff_delays(config: GatewayConfig):
    # 0.5, 1, 2, 4 ... seconds by default, capped; nondecreasing by construction.
    for attempt in range(config.max_attempts - 1):
        yield min(config.backoff_cap_s, config.backoff_base_s * (2 ** attempt))


class LLMGateway:
    """Thread-safe client: cache lookup first, then rate-limited POST with retries."""

    def __init__(self, config: GatewayConfig, cache: ResponseCache | None = None,
                 session: requests.Session | None = None):
        self.config = config
        self.cache = cache
        self._session = session or requests.Session()
        self._in_flight = threading.Semaphore(config.max_in_flight)
        self._bucket = TokenBucket(config.requests_per_second, config.burst)

    # -- chat completions ---------------------------------------------------

    def complete(self, request: CompletionRequest) -> CompletionResult:
        key = request_digest(request.model, request.temperature, request.system_text, request.user_text)
        if self.cache is not None:
            hit = self.cache.lookup(key)
            if hit is not None:
                return _payload_to_result(hit)
        if not self.config.api_key:
            raise MissingCredentialError(
                "no API key configured; set " + " or ".join(ENV_API_KEY)
            )
        body = {
            "model": request.model,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "logprobs": True,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
        }
        data, latency_ms = self._post_with_retries("/chat/completions", body)
        result = self._parse_completion(data, latency_ms)
        if self.cache is not None:
            self.cache.store(key, _result_to_payload(result))
        return result

    def _parse_completion(self, data: dict, latency_ms: float) -> CompletionResult:
        try:
            choice = data["choices"][0]
            answer = choice["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError(f"completion body missing choices/message: {exc}") from exc
        logprobs = choice.get("logprobs")
        content = logprobs.get("content") if isinstance(logprobs, dict) else None
        if not content:
            raise LogprobsUnsupportedError(
                "endpoint returned no token logprobs; scoring requires a logprob-capable endpoint"
            )
        try:
            tokens = tuple((item["token"], float(item["logprob"])) for item in content)
            token_logprobs = TokenLogprobs(tokens)
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedResponseError(f"bad token logprob entry: {exc}") from exc
        return CompletionResult(
            answer_text=answer,
            token_logprobs=token_logprobs,
            model_echo=str(data.get("model", "")),
            latency_ms=latency_ms,
        )

    # -- embeddings ---------------------------------------------------------

    def embed(self, text: str, model: str | None = None) -> tuple[float, ...]:
        """Fetch an embedding vector through the same retry/cache machinery."""
        model = model or self.config.model
        key = embedding_digest(model, text)
        if self.cache is not None:
            hit = self.cache.lookup(key)
            if hit is not None:
                return tuple(float(v) for v in hit["vector"])
        if not self.config.api_key:
            raise MissingCredentialError(
                "no API key configured; set " + " or ".join(ENV_API_KEY)
            )
        data, _ = self._post_with_retries("/embeddings", {"model": model, "input": [text]})
        try:
            vector = tuple(float(v) for v in data["data"][0]["embedding"])
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise MalformedResponseError(f"embedding body malformed: {exc}") from exc
        if self.cache is not None:
            self.cache.store(key, {"vector": list(vector)})
        return vector

    # -- transport ----------------------------------------------------------

    def _post_with_retries(self, route: str, body: dict) -> tuple[dict, float]:
        url = self.config.base_url.rstrip("/") + route
        headers = {"Authorization": f"Bearer {self.config.api_key}", "Content-Type": "application/json"}
        delays = list(_backoff_delays(self.config))
        last_failure = "no attempt made"
        for attempt in range(self.config.max_attempts):
            self._bucket.acquire()
            started = time.monotonic()
            try:
                with self._in_flight:
                    response = self._session.post(
                        url, json=body, headers=headers, timeout=self.config.timeout_s
                    )
            except requests.RequestException as exc:
                last_failure = f"transport error: {exc}"
            else:
                latency_ms = (time.monotonic() - started) * 1000.0
                if response.status_code == 200:
                    try:
                        return response.json(), latency_ms
                    except ValueError as exc:
                        raise MalformedResponseError(f"response body is not JSON: {exc}") from exc
                if response.status_code == 429 or response.status_code >= 500:
                    last_failure = f"HTTP {response.status_code}"
                elif response.status_code in (401, 403):
                    raise MissingCredentialError(f"endpoint rejected credential (HTTP {response.status_code})")
                else:
                    raise GatewayError(f"HTTP {response.status_code}: {response.text[:300]}")
            if attempt < len(delays):
                time.sleep(delays[attempt])
        raise RetryExhaustedError(
            f"gave up after {self.config.max_attempts} attempts; last failure: {last_failure}"
        )
