"""LLM backends, token counting, and the shared input-token budget.

Two backend kinds exist: an OpenAI-compatible HTTP backend for real serving
endpoints and a deterministic scripted mock for tests and desk-scale runs.
Every request is metered: input tokens accumulate into per-role buckets (eval
vs meta) against a single shared cap.
"""
from __future__ import annotations

import logging
import math
import os
import re
import threading
import time
from dataclasses import dataclass, field

log = logging.getLogger(__name__)

API_KEY_ENV = "CAPO_API_KEY"

KIND_HTTP = "http_openai_compatible"
KIND_MOCK = "scripted_mock"

TOKENIZERS = ("backend_reported", "approx_whitespace", "approx_bytes_div4")

ROLE_EVAL = "eval"
ROLE_META = "meta"

HTTP_ATTEMPTS = 3
HTTP_BACKOFF_BASE = 0.5
HTTP_TIMEOUT = 120.0


class BackendError(RuntimeError):
    """Transport or HTTP failure after retries; carries request context, never credentials."""


class ProtocolError(BackendError):
    """Backend answered but the payload does not match the expected shape."""


def count_tokens(text: str, tokenizer: str) -> int:
    """Approximate token count of locally-rendered text.

    backend_reported has no local rule, so it falls back to the bytes/4
    approximation; real backend counts are taken from response usage fields.
    """
    if tokenizer == "approx_whitespace":
        return len(text.split())
    if tokenizer in ("approx_bytes_div4", "backend_reported"):
        return math.ceil(len(text.encode("utf-8")) / 4)
    raise ValueError(f"unknown tokenizer {tokenizer!r}")


@dataclass(frozen=True)
class MockRule:
    """One scripted-response rule: a matcher plus a response template.

    Exactly one of `contains` / `regex` is set. A `contains` rule responds with
    its template verbatim; a `regex` rule expands group references in the
    template (\\1, \\g<name>) from the match. The empty-substring rule matches
    everything and serves as the mandatory trailing catch-all.
    """

    template: str
    contains: str | None = None
    regex: str | None = None

    def __post_init__(self) -> None:
        if (self.contains is None) == (self.regex is None):
            raise ValueError("rule must set exactly one of contains/regex")

    @classmethod
    def catch_all(cls, template: str) -> "MockRule":
        return cls(template=template, contains="")

    @property
    def is_catch_all(self) -> bool:
        return self.contains == ""

    def respond(self, text: str) -> str | None:
        """Response text if this rule matches, else None."""
        if self.contains is not None:
            return self.template if self.contains in text else None
        m = re.search(self.regex, text)
        return m.expand(self.template) if m else None


@dataclass(frozen=True)
class BackendSpec:
    """Where and how to run completions, plus the token-counting mode."""

    kind: str
    model: str = ""
    endpoint: str = ""
    tokenizer: str = "approx_whitespace"
    rules: tuple[MockRule, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in (KIND_HTTP, KIND_MOCK):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.tokenizer not in TOKENIZERS:
            raise ValueError(f"unknown tokenizer {self.tokenizer!r}")
        if self.kind == KIND_HTTP and not self.endpoint:
            raise ValueError("http backend requires an endpoint")
        if self.kind == KIND_MOCK:
            if not self.rules:
                raise ValueError("scripted mock requires at least one rule")
            if not self.rules[-1].is_catch_all:
                raise ValueError("scripted mock's last rule must be a catch-all")


def mock_program(rules: list[MockRule] | tuple[MockRule, ...],
                 tokenizer: str = "approx_whitespace") -> BackendSpec:
    """Build a deterministic scripted backend from ordered rules."""
    return BackendSpec(kind=KIND_MOCK, model="scripted-mock",
                       tokenizer=tokenizer, rules=tuple(rules))


@dataclass(frozen=True)
class ChatRequest:
    """A single-turn completion request."""

    user: str
    system: str | None = None
    max_output_tokens: int = 2048
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if not self.user:
            raise ValueError("user message must be non-empty")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be >= 1")


@dataclass(frozen=True)
class ChatResponse:
    """Completion text plus token counts (backend-reported when available)."""

    text: str
    input_tokens: int
    output_tokens: int

    def __post_init__(self) -> None:
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ValueError("token counts must be non-negative")


@dataclass(frozen=True)
class MeterEntry:
    """One metered request, the unit of the replayable request log."""

    role: str
    input_tokens: int
    output_tokens: int


@dataclass
class BudgetMeter:
    """Shared input-token budget with per-role buckets and a request log.

    cap=None disables the cap (used for holdout evaluation, where tokens are
    still counted but never gate anything). Updates are atomic so concurrent
    block evaluation stays consistent.
    """

    cap: int | None
    spent_eval: int = 0
    spent_meta: int = 0
    entries: list[MeterEntry] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self) -> None:
        if self.cap is not None and self.cap < 0:
            raise ValueError("cap must be None or >= 0")

    def add(self, role: str, input_tokens: int, output_tokens: int = 0) -> None:
        if role not in (ROLE_EVAL, ROLE_META):
            raise ValueError(f"unknown meter role {role!r}")
        if input_tokens < 0:
            raise ValueError("input_tokens must be >= 0")
        with self._lock:
            if role == ROLE_EVAL:
                self.spent_eval += input_tokens
            else:
                self.spent_meta += input_tokens
            self.entries.append(MeterEntry(role, input_tokens, output_tokens))

    @property
    def spent_total(self) -> int:
        return self.spent_eval + self.spent_meta

    def is_exhausted(self) -> bool:
        return self.cap is not None and self.spent_total >= self.cap


def _request_text(request: ChatRequest) -> str:
    return request.user if request.system is None else request.system + "\n" + request.user


def _complete_mock(backend: BackendSpec, request: ChatRequest) -> str:
    text = _request_text(request)
    for rule in backend.rules:
        response = rule.respond(text)
        if response is not None:
            return response
    raise ProtocolError("scripted mock matched no rule despite catch-all")


def _complete_http(backend: BackendSpec, request: ChatRequest) -> tuple[str, int | None, int | None]:
    import requests

    url = backend.endpoint.rstrip("/") + "/chat/completions"
    messages = []
    if request.system is not None:
        messages.append({"role": "system", "content": request.system})
    messages.append({"role": "user", "content": request.user})
    body = {
        "model": backend.model,
        "messages": messages,
        "max_tokens": request.max_output_tokens,
        "temperature": request.temperature,
    }
    headers = {"Content-Type": "application/json"}
    api_key = os.environ.get(API_KEY_ENV)
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"

    last_error: str = ""
    for attempt in range(HTTP_ATTEMPTS):
        if attempt:
            time.sleep(HTTP_BACKOFF_BASE * (2 ** (attempt - 1)))
        try:
            resp = requests.post(url, json=body, headers=headers, timeout=HTTP_TIMEOUT)
        except requests.RequestException as exc:
            last_error = f"transport error: {type(exc).__name__}"
            log.warning("request to %s failed (attempt %d/%d): %s",
                        url, attempt + 1, HTTP_ATTEMPTS, last_error)
            continue
        if resp.status_code == 429 or resp.status_code >= 500:
            last_error = f"retryable status {resp.status_code}"
            log.warning("request to %s got %s (attempt %d/%d)",
                        url, resp.status_code, attempt + 1, HTTP_ATTEMPTS)
            continue
        if resp.status_code != 200:
            raise BackendError(f"request to {url} failed with status {resp.status_code}")
        try:
            payload = resp.json()
            text = payload["choices"][0]["message"]["content"]
            if not isinstance(text, str):
                raise TypeError("content is not a string")
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"malformed response payload from {url}: {exc}") from exc
        usage = payload.get("usage") or {}
        in_tok = usage.get("prompt_tokens")
        out_tok = usage.get("completion_tokens")
        return text, in_tok, out_tok
    raise BackendError(f"request to {url} failed after {HTTP_ATTEMPTS} attempts ({last_error})")


def complete(backend: BackendSpec, request: ChatRequest, meter: BudgetMeter,
             role: str) -> ChatResponse:
    """Run one completion, meter its input tokens under `role`, return the response.

    Budget exhaustion does not gate individual requests; callers check the
    meter at step boundaries.
    """
    if backend.kind == KIND_MOCK:
        text = _complete_mock(backend, request)
        in_tok = count_tokens(_request_text(request), backend.tokenizer)
        out_tok = count_tokens(text, backend.tokenizer)
    else:
        text, in_tok, out_tok = _complete_http(backend, request)
        if in_tok is None:
            in_tok = count_tokens(_request_text(request), backend.tokenizer)
        if out_tok is None:
            out_tok = count_tokens(text, backend.tokenizer)
    meter.add(role, in_tok, out_tok)
    return ChatResponse(text=text, input_tokens=in_tok, output_tokens=out_tok)
