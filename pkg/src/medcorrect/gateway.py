"""Chat backend access: remote OpenAI-style endpoints and scripted mocks.

The gateway serializes every exchange through an audit log, optionally
caches responses, and throttles concurrent and per-second request rates.
Message lists are identified by a stable digest so mocks, caches, and audit
entries all speak the same key.
"""

import hashlib
import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Callable, Dict, List, Optional, Sequence

import requests

from .errors import ConfigError, RequestError, TransportError
from .prompts import ChatMessage

logger = logging.getLogger(__name__)

_BACKOFF_BASE = 1.0
_BACKOFF_FACTOR = 2.0

Transport = Callable[[Sequence[ChatMessage]], str]


def digest(messages: Sequence[ChatMessage]) -> str:
    """Stable hex digest of a message list."""
    packed = json.dumps([[m.role, m.content] for m in messages],
                        ensure_ascii=True, separators=(",", ":"))
    return hashlib.sha256(packed.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class BackendConfig:
    """Connection and sampling settings for a chat backend."""

    endpoint: str = "https://api.openai.com/v1/chat/completions"
    model_name: str = "gpt-3.5-turbo-0613"
    temperature: float = 0.0
    top_p: float = 0.0
    frequency_penalty: float = 0.0
    presence_penalty: float = 0.0
    max_new_tokens: int = 256
    request_timeout: float = 60.0
    max_retries: int = 5
    max_parallel: int = 4
    requests_per_second: Optional[float] = None
    api_key_env: str = "OPENAI_API_KEY"

    def __post_init__(self):
        if self.max_new_tokens < 1:
            raise ConfigError("max_new_tokens must be positive")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be non-negative")
        if self.max_parallel < 1:
            raise ConfigError("max_parallel must be positive")
        if self.requests_per_second is not None and self.requests_per_second <= 0:
            raise ConfigError("requests_per_second must be positive when set")

    def sampling_key(self) -> str:
        """Digest of the settings that influence a response."""
        packed = json.dumps([self.model_name, self.temperature, self.top_p,
                             self.frequency_penalty, self.presence_penalty,
                             self.max_new_tokens], separators=(",", ":"))
        return hashlib.sha256(packed.encode("utf-8")).hexdigest()


@dataclass
class MockScript:
    """Canned responses keyed by message digest, for offline runs and tests."""

    responses: Dict[str, str] = field(default_factory=dict)
    default_response: Optional[str] = None
    calls: List[str] = field(default_factory=list)

    def script(self, messages: Sequence[ChatMessage], response: str) -> None:
        """Register the response for one exact message list."""
        self.responses[digest(messages)] = response

    def script_digest(self, message_digest: str, response: str) -> None:
        self.responses[message_digest] = response

    @classmethod
    def load(cls, path: str) -> "MockScript":
        """Read a scripted-responses file: {default_response?, responses?}."""
        with open(path, encoding="utf-8") as handle:
            payload = json.load(handle)
        if not isinstance(payload, dict):
            raise ConfigError(f"{path}: mock script must be a JSON object")
        responses = payload.get("responses", {})
        default = payload.get("default_response")
        if not isinstance(responses, dict) or not all(
                isinstance(k, str) and isinstance(v, str)
                for k, v in responses.items()):
            raise ConfigError(f"{path}: responses must map digests to strings")
        if default is not None and not isinstance(default, str):
            raise ConfigError(f"{path}: default_response must be a string")
        return cls(responses=dict(responses), default_response=default)

    def as_transport(self) -> Transport:
        def transport(messages: Sequence[ChatMessage]) -> str:
            d = digest(messages)
            self.calls.append(d)
            if d in self.responses:
                return self.responses[d]
            if self.default_response is not None:
                return self.default_response
            raise RequestError(f"mock script has no response for digest {d[:12]}")
        return transport


class LlmGateway:
    """Single entry point for chat completions.

    With a transport callable the gateway is fully offline; without one it
    speaks the OpenAI chat-completions HTTP protocol, reading the API key
    from the configured environment variable. Remote calls retry on 429,
    5xx, and transport failures with jittered exponential backoff.
    """

    def __init__(self, config: BackendConfig,
                 transport: Optional[Transport] = None,
                 cache_path: Optional[str] = None,
                 audit_path: Optional[str] = None):
        self.config = config
        self._transport = transport
        self._cache_path = cache_path
        self._audit_path = audit_path
        self._cache: Optional[Dict[str, str]] = None
        if cache_path is not None:
            self._cache = self._load_cache(cache_path)
        self._semaphore = threading.Semaphore(config.max_parallel)
        self._io_lock = threading.Lock()
        self._rate_lock = threading.Lock()
        self._next_slot = 0.0
        self.n_calls = 0
        self.n_cache_hits = 0

    @staticmethod
    def _load_cache(path: str) -> Dict[str, str]:
        cache: Dict[str, str] = {}
        if os.path.exists(path):
            with open(path, encoding="utf-8") as handle:
                for line in handle:
                    line = line.strip()
                    if not line:
                        continue
                    row = json.loads(line)
                    cache[row["key"]] = row["response"]
            logger.info("loaded %d cached responses from %s", len(cache), path)
        return cache

    def _cache_key(self, message_digest: str) -> str:
        return message_digest + ":" + self.config.sampling_key()

    def _throttle(self) -> None:
        rps = self.config.requests_per_second
        if rps is None:
            return
        with self._rate_lock:
            now = time.monotonic()
            wait = self._next_slot - now
            self._next_slot = max(now, self._next_slot) + 1.0 / rps
        if wait > 0:
            time.sleep(wait)

    def _remote_call(self, messages: Sequence[ChatMessage]) -> str:
        api_key = os.environ.get(self.config.api_key_env)
        if not api_key:
            raise ConfigError(
                f"environment variable {self.config.api_key_env} is not set")
        payload = {
            "model": self.config.model_name,
            "messages": [{"role": m.role, "content": m.content}
                         for m in messages],
            "temperature": self.config.temperature,
            "top_p": self.config.top_p,
            "frequency_penalty": self.config.frequency_penalty,
            "presence_penalty": self.config.presence_penalty,
            "max_tokens": self.config.max_new_tokens,
        }
        headers = {"Authorization": "Bearer " + api_key}
        last_failure = "no attempt made"
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                delay = random.uniform(
                    0, _BACKOFF_BASE * _BACKOFF_FACTOR ** (attempt - 1))
                logger.info("retrying after %.2fs (attempt %d): %s",
                            delay, attempt + 1, last_failure)
                time.sleep(delay)
            try:
                reply = requests.post(self.config.endpoint, json=payload,
                                      headers=headers,
                                      timeout=self.config.request_timeout)
            except requests.RequestException as exc:
                last_failure = f"transport failure: {exc}"
                continue
            if reply.status_code == 429 or reply.status_code >= 500:
                last_failure = f"status {reply.status_code}"
                continue
            if reply.status_code != 200:
                raise RequestError(
                    f"backend rejected request with status {reply.status_code}: "
                    f"{reply.text[:200]}")
            try:
                body = reply.json()
                content = body["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise RequestError(f"malformed backend response: {exc}") from exc
            if not isinstance(content, str):
                raise RequestError("backend response content is not text")
            return content
        raise TransportError(
            f"gave up after {self.config.max_retries + 1} attempts "
            f"({last_failure})")

    def _audit(self, message_digest: str, response: str, cached: bool) -> None:
        if self._audit_path is None:
            return
        entry = {
            "ts": datetime.now(timezone.utc).isoformat(),
            "digest": message_digest,
            "model": self.config.model_name,
            "cached": cached,
            "response": response,
        }
        with self._io_lock:
            with open(self._audit_path, "a", encoding="utf-8") as handle:
                handle.write(json.dumps(entry, ensure_ascii=False) + "\n")

    def chat(self, messages: Sequence[ChatMessage]) -> str:
        """Send one message list and return the assistant text."""
        message_digest = digest(messages)
        key = self._cache_key(message_digest)
        if self._cache is not None:
            with self._io_lock:
                hit = self._cache.get(key)
            if hit is not None:
                self.n_cache_hits += 1
                self._audit(message_digest, hit, cached=True)
                return hit
        with self._semaphore:
            self._throttle()
            if self._transport is not None:
                response = self._transport(messages)
            else:
                response = self._remote_call(messages)
            self.n_calls += 1
        if self._cache is not None:
            with self._io_lock:
                self._cache[key] = response
                if self._cache_path is not None:
                    with open(self._cache_path, "a", encoding="utf-8") as handle:
                        handle.write(json.dumps(
                            {"key": key, "response": response},
                            ensure_ascii=False) + "\n")
        self._audit(message_digest, response, cached=False)
        return response
