"""Rate-limited, retrying client for a chat-completions HTTP service.

One client instance may be shared by many worker threads: an in-flight
semaphore caps concurrent requests and a monotonic-clock pacer spaces
request starts to the configured rate. Retries use exponential backoff
and only fire for retryable statuses or transport failures.
"""

import os
import threading
import time
from dataclasses import dataclass
from typing import Callable

import httpx

from .errors import ConfigError, ForgeError

API_KEY_ENV = "REWRITE_API_KEY"
COMPLETIONS_PATH = "/v1/chat/completions"
DEFAULT_TIMEOUT_SECONDS = 120.0


class ClientError(ForgeError):
    """Base for chat-service failures."""


class TransientFailureError(ClientError):
    """Retries exhausted; carries the last observed status (None = transport)."""

    def __init__(self, message: str, last_status: "int | None", attempts: int):
        super().__init__(message)
        self.last_status = last_status
        self.attempts = attempts


class PermanentRequestError(ClientError):
    """The service rejected the request; retrying cannot help."""

    def __init__(self, message: str, status: int):
        super().__init__(message)
        self.status = status


class MalformedResponseError(ClientError):
    """A 200 response without the expected completion content."""


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ("system", "user"):
            raise ConfigError(f"message role must be system or user, got {self.role!r}")
        if not self.content:
            raise ConfigError("message content must be non-empty")


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple
    temperature: float
    top_p: float
    max_output_tokens: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.model:
            raise ConfigError("model name must be non-empty")
        if not any(m.role == "user" for m in self.messages):
            raise ConfigError("request needs at least one user message")
        if self.temperature < 0:
            raise ConfigError(f"temperature must be >= 0, got {self.temperature}")
        if not (0 < self.top_p <= 1):
            raise ConfigError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.max_output_tokens < 1:
            raise ConfigError(f"max_output_tokens must be positive, got {self.max_output_tokens}")

    def to_payload(self) -> dict:
        return {
            "model": self.model,
            "messages": [{"role": m.role, "content": m.content} for m in self.messages],
            "temperature": self.temperature,
            "top_p": self.top_p,
            "max_tokens": self.max_output_tokens,
        }


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 5
    base_backoff: float = 1.0
    backoff_multiplier: float = 2.0
    retryable_statuses: frozenset = frozenset({429, 500, 502, 503, 504})

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ConfigError(f"max_attempts must be >= 1, got {self.max_attempts}")
        if self.backoff_multiplier < 1:
            raise ConfigError(
                f"backoff_multiplier must be >= 1, got {self.backoff_multiplier}"
            )
        if self.base_backoff < 0:
            raise ConfigError(f"base_backoff must be >= 0, got {self.base_backoff}")
        object.__setattr__(self, "retryable_statuses", frozenset(self.retryable_statuses))


@dataclass(frozen=True)
class RateLimit:
    max_in_flight: int = 4
    requests_per_second: float = 8.0

    def __post_init__(self) -> None:
        if self.max_in_flight < 1:
            raise ConfigError(f"max_in_flight must be >= 1, got {self.max_in_flight}")
        if self.requests_per_second <= 0:
            raise ConfigError(
                f"requests_per_second must be positive, got {self.requests_per_second}"
            )


@dataclass(frozen=True)
class ChatCompletion:
    text: str
    attempts: int
    status: int


class ChatClient:
    """Shared client for `{base_url}/v1/chat/completions`.

    The credential is read from the REWRITE_API_KEY environment variable
    so it never appears in configuration files or manifests; tests may
    inject one directly.
    """

    def __init__(
        self,
        base_url: str,
        rate_limit: RateLimit = RateLimit(),
        retry: RetryPolicy = RetryPolicy(),
        timeout: float = DEFAULT_TIMEOUT_SECONDS,
        api_key: "str | None" = None,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        if not base_url:
            raise ConfigError("base_url must be non-empty")
        key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        if key is None:
            raise ConfigError(f"credential missing: set {API_KEY_ENV}")
        self.base_url = base_url.rstrip("/")
        self.rate_limit = rate_limit
        self.retry = retry
        self._sleep = sleeper
        self._http = httpx.Client(
            timeout=timeout, headers={"Authorization": f"Bearer {key}"}
        )
        self._slots = threading.Semaphore(rate_limit.max_in_flight)
        self._pace_lock = threading.Lock()
        self._min_interval = 1.0 / rate_limit.requests_per_second
        self._next_start = 0.0

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> "ChatClient":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def _pace(self) -> None:
        with self._pace_lock:
            now = time.monotonic()
            start = max(now, self._next_start)
            self._next_start = start + self._min_interval
        wait = start - now
        if wait > 0:
            self._sleep(wait)

    def _attempt(self, payload: dict) -> httpx.Response:
        with self._slots:
            self._pace()
            return self._http.post(self.base_url + COMPLETIONS_PATH, json=payload)

    @staticmethod
    def _extract_content(response: httpx.Response) -> str:
        try:
            body = response.json()
            content = body["choices"][0]["message"]["content"]
        except (ValueError, LookupError, TypeError) as exc:
            raise MalformedResponseError(f"unexpected response shape: {exc}") from None
        if not isinstance(content, str):
            raise MalformedResponseError("completion content is not a string")
        return content

    def complete(self, request: ChatRequest, retry: "RetryPolicy | None" = None) -> ChatCompletion:
        """Send one request, retrying per policy; returns text + attempt count."""
        policy = retry if retry is not None else self.retry
        payload = request.to_payload()
        delay = policy.base_backoff
        last_status: "int | None" = None
        last_cause = "no attempt made"
        for attempt in range(1, policy.max_attempts + 1):
            try:
                response = self._attempt(payload)
            except httpx.TransportError as exc:
                last_status = None
                last_cause = f"transport failure: {exc}"
            else:
                status = response.status_code
                if status == 200:
                    return ChatCompletion(
                        text=self._extract_content(response),
                        attempts=attempt,
                        status=status,
                    )
                if status not in policy.retryable_statuses:
                    raise PermanentRequestError(
                        f"service rejected request with status {status} "
                        f"after {attempt} attempt(s)",
                        status=status,
                    )
                last_status = status
                last_cause = f"status {status}"
            if attempt < policy.max_attempts:
                if delay > 0:
                    self._sleep(delay)
                delay *= policy.backoff_multiplier
        raise TransientFailureError(
            f"retries exhausted after {policy.max_attempts} attempts ({last_cause})",
            last_status=last_status,
            attempts=policy.max_attempts,
        )

    def send_chat(self, request: ChatRequest, retry: "RetryPolicy | None" = None) -> str:
        """Completion text of the first choice for one request."""
        return self.complete(request, retry).text


def build_messages(system: str, user: str) -> tuple:
    return (ChatMessage("system", system), ChatMessage("user", user))
