"""Chat/vision completion gateway with retries, rate limiting and record/replay.

Every LLM or LVLM call in the harness goes through :class:`Gateway`. A gateway
runs in one of three modes:

``live``
    call the transport.
``record``
    call the transport and store each exchange in a :class:`ReplayStore`.
``replay``
    answer only from the store; the transport is never touched.

Store entries are content-addressed by :func:`canonical_request_hash`, so
image paths may move without invalidating fixtures.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import mimetypes
import os
import random
import re
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Protocol

import httpx
import jsonschema

from .errors import BenchError

logger = logging.getLogger(__name__)

DEFAULT_MODEL = "gemini-2.0-flash"
DEFAULT_ENDPOINT = "https://generativelanguage.googleapis.com/v1beta/openai"
API_KEY_ENV = "SEMMAP_LLM_API_KEY"
RETRYABLE_STATUS = frozenset({408, 409, 425, 429, 500, 502, 503, 504})


class GatewayError(BenchError):
    def __init__(self, message, last_cause=None):
        super().__init__(message)
        self.last_cause = last_cause


class TransientError(GatewayError):
    """A failure worth retrying (rate limit, timeout, 5xx)."""


class ReplayMissError(GatewayError):
    def __init__(self, digest):
        super().__init__(f"replay store has no entry for request {digest}")
        self.digest = digest


class StructuredOutputError(GatewayError):
    def __init__(self, message, raw_text, attempts):
        super().__init__(message)
        self.raw_text = raw_text
        self.attempts = attempts


@dataclass(frozen=True)
class Message:
    role: str  # "system" | "user"
    text: str
    image_refs: tuple = ()

    def __post_init__(self):
        if self.role not in ("system", "user"):
            raise ValueError(f"unsupported role '{self.role}'")
        if self.image_refs and self.role != "user":
            raise ValueError("images are only allowed on user messages")
        object.__setattr__(self, "image_refs", tuple(str(p) for p in self.image_refs))


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple
    model_id: str = DEFAULT_MODEL
    temperature: float = 0.0
    max_tokens: int = 2048
    response_schema: Optional[dict] = None

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise ValueError("a request needs at least one message")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def with_messages(self, *extra: Message) -> "ChatRequest":
        return replace(self, messages=self.messages + extra)


@dataclass(frozen=True)
class ChatResponse:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency: float = 0.0

    def to_dict(self):
        return {"text": self.text, "prompt_tokens": self.prompt_tokens,
                "completion_tokens": self.completion_tokens, "latency": self.latency}


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def canonical_request(req: ChatRequest) -> dict:
    """JSON-able view of a request; images are replaced by their content hash."""
    return {
        "model_id": req.model_id,
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
        "response_schema": req.response_schema,
        "messages": [{"role": m.role, "text": m.text,
                      "images": [_file_digest(p) for p in m.image_refs]}
                     for m in req.messages],
    }


def _canonical_bytes(doc) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode()


def canonical_request_hash(req: ChatRequest) -> str:
    return hashlib.sha256(_canonical_bytes(canonical_request(req))).hexdigest()


class Transport(Protocol):
    def send(self, req: ChatRequest) -> ChatResponse: ...


class ChatCompletionsTransport:
    """Speaks the widely used ``/chat/completions`` JSON dialect over HTTP."""

    def __init__(self, endpoint=DEFAULT_ENDPOINT, api_key=None, api_key_env=API_KEY_ENV,
                 timeout=60.0, client: Optional[httpx.Client] = None):
        self.url = endpoint.rstrip("/") + "/chat/completions"
        self._api_key = api_key if api_key is not None else os.environ.get(api_key_env)
        self._client = client or httpx.Client(timeout=timeout)

    def _payload(self, req: ChatRequest) -> dict:
        messages = []
        for m in req.messages:
            if not m.image_refs:
                messages.append({"role": m.role, "content": m.text})
                continue
            parts = [{"type": "text", "text": m.text}]
            for ref in m.image_refs:
                mime = mimetypes.guess_type(ref)[0] or "image/png"
                data = base64.b64encode(Path(ref).read_bytes()).decode("ascii")
                parts.append({"type": "image_url",
                              "image_url": {"url": f"data:{mime};base64,{data}"}})
            messages.append({"role": m.role, "content": parts})
        payload = {"model": req.model_id, "messages": messages,
                   "temperature": req.temperature, "max_tokens": req.max_tokens}
        if req.response_schema is not None:
            payload["response_format"] = {
                "type": "json_schema",
                "json_schema": {"name": "response", "schema": req.response_schema},
            }
        return payload

    def send(self, req: ChatRequest) -> ChatResponse:
        headers = {}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        start = time.perf_counter()
        try:
            resp = self._client.post(self.url, json=self._payload(req), headers=headers)
        except httpx.TransportError as exc:
            raise TransientError(f"transport failure: {exc}", exc) from exc
        latency = time.perf_counter() - start
        if resp.status_code in RETRYABLE_STATUS:
            raise TransientError(f"HTTP {resp.status_code}", resp.status_code)
        if resp.status_code >= 400:
            raise GatewayError(f"HTTP {resp.status_code}: {resp.text[:200]}", resp.status_code)
        try:
            body = resp.json()
            text = body["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"unexpected response body: {exc}", exc) from exc
        usage = body.get("usage") or {}
        return ChatResponse(text, int(usage.get("prompt_tokens", 0)),
                            int(usage.get("completion_tokens", 0)), latency)


class ReplayStore:
    """Directory of ``<digest>.json`` files holding a canonical request and its response."""

    def __init__(self, root):
        self.root = Path(root)
        self._lock = threading.Lock()

    def path_for(self, digest: str) -> Path:
        return self.root / f"{digest}.json"

    def get(self, digest: str) -> Optional[ChatResponse]:
        path = self.path_for(digest)
        if not path.is_file():
            return None
        doc = json.loads(path.read_text(encoding="utf-8"))
        r = doc["response"]
        return ChatResponse(r["text"], r.get("prompt_tokens", 0), r.get("completion_tokens", 0),
                            r.get("latency", 0.0))

    def put(self, digest: str, request_doc: dict, response: ChatResponse) -> None:
        doc = {"digest": digest, "request": request_doc, "response": response.to_dict()}
        text = json.dumps(doc, indent=1, sort_keys=True, ensure_ascii=False) + "\n"
        with self._lock:
            self.root.mkdir(parents=True, exist_ok=True)
            tmp = self.path_for(digest).with_suffix(".tmp")
            tmp.write_text(text, encoding="utf-8")
            os.replace(tmp, self.path_for(digest))

    def __len__(self):
        return len(list(self.root.glob("*.json"))) if self.root.is_dir() else 0


@dataclass
class GatewayStats:
    calls: int = 0
    transport_calls: int = 0
    retries: int = 0
    replay_hits: int = 0
    structured_reprompts: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def bump(self, name, n=1):
        with self._lock:
            setattr(self, name, getattr(self, name) + n)


class Gateway:
    """Single entry point for completion calls; safe to share across threads."""

    def __init__(self, transport: Optional[Transport] = None, mode: str = "live",
                 store: Optional[ReplayStore] = None, max_attempts: int = 3,
                 backoff_base: float = 1.0, backoff_factor: float = 2.0, jitter: float = 0.2,
                 max_in_flight: int = 4, min_interval: float = 0.0, structured_retries: int = 2,
                 sleep=time.sleep, seed: int = 0):
        if mode not in ("live", "record", "replay"):
            raise ValueError(f"unknown gateway mode '{mode}'")
        if mode != "replay" and transport is None:
            raise ValueError(f"{mode} mode needs a transport")
        if mode != "live" and store is None:
            raise ValueError(f"{mode} mode needs a replay store")
        if max_attempts < 1 or max_in_flight < 1:
            raise ValueError("max_attempts and max_in_flight must be >= 1")
        self.transport = transport
        self.mode = mode
        self.store = store
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.backoff_factor = backoff_factor
        self.jitter = jitter
        self.structured_retries = structured_retries
        self.min_interval = min_interval
        self.stats = GatewayStats()
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._sleep = sleep
        self._rng = random.Random(seed)
        self._rate_lock = threading.Lock()
        self._next_slot = 0.0

    def _wait_for_rate(self):
        if self.min_interval <= 0:
            return
        with self._rate_lock:
            now = time.monotonic()
            wait = self._next_slot - now
            self._next_slot = max(now, self._next_slot) + self.min_interval
        if wait > 0:
            self._sleep(wait)

    def _backoff(self, attempt: int) -> float:
        delay = self.backoff_base * self.backoff_factor ** (attempt - 1)
        with self._rate_lock:
            factor = 1 + self._rng.uniform(-self.jitter, self.jitter)
        return delay * factor

    def _send_with_retries(self, req: ChatRequest) -> ChatResponse:
        last = None
        for attempt in range(1, self.max_attempts + 1):
            self._wait_for_rate()
            try:
                with self._slots:
                    self.stats.bump("transport_calls")
                    return self.transport.send(req)
            except TransientError as exc:
                last = exc
                if attempt == self.max_attempts:
                    break
                delay = self._backoff(attempt)
                logger.warning("transient gateway failure (%s); retry %d/%d in %.2fs",
                               exc, attempt, self.max_attempts - 1, delay)
                self.stats.bump("retries")
                self._sleep(delay)
        raise GatewayError(f"gave up after {self.max_attempts} attempts: {last}", last) from last

    def complete(self, req: ChatRequest) -> ChatResponse:
        self.stats.bump("calls")
        if self.mode == "live":
            return self._send_with_retries(req)
        request_doc = canonical_request(req)
        digest = hashlib.sha256(_canonical_bytes(request_doc)).hexdigest()
        if self.mode == "replay":
            cached = self.store.get(digest)
            if cached is None:
                raise ReplayMissError(digest)
            self.stats.bump("replay_hits")
            return cached
        response = self._send_with_retries(req)
        self.store.put(digest, request_doc, response)
        return response

    def complete_structured(self, req: ChatRequest, schema: Optional[dict] = None):
        """Complete and parse a JSON document validated against ``schema``.

        A reply that fails to parse or validate triggers a corrective re-prompt
        carrying the error, up to ``structured_retries`` times.
        """
        schema = schema if schema is not None else req.response_schema
        if schema is None:
            raise ValueError("complete_structured needs a response schema")
        if req.response_schema is None:
            req = replace(req, response_schema=schema)
        current = req
        text = ""
        for attempt in range(self.structured_retries + 1):
            text = self.complete(current).text
            try:
                doc = parse_json_reply(text)
                jsonschema.validate(doc, schema)
                return doc
            except (ValueError, jsonschema.ValidationError) as exc:
                error = exc.message if isinstance(exc, jsonschema.ValidationError) else str(exc)
                if attempt == self.structured_retries:
                    raise StructuredOutputError(
                        f"no valid structured reply after {attempt + 1} attempts: {error}",
                        text, attempt + 1) from None
                self.stats.bump("structured_reprompts")
                current = req.with_messages(Message("user", corrective_prompt(text, error)))
        raise AssertionError("unreachable")


_FENCE = re.compile(r"^```(?:json)?\s*(.*?)\s*```$", re.DOTALL)


def parse_json_reply(text: str):
    stripped = text.strip()
    m = _FENCE.match(stripped)
    if m:
        stripped = m.group(1)
    try:
        return json.loads(stripped)
    except json.JSONDecodeError as exc:
        raise ValueError(f"reply is not valid JSON ({exc.msg} at line {exc.lineno})") from None


def corrective_prompt(previous: str, error: str) -> str:
    return ("Your previous reply could not be used.\n"
            f"Problem: {error}\n"
            f"Previous reply:\n{previous}\n"
            "Reply again with only a JSON document that satisfies the required schema.")


@dataclass(frozen=True)
class GatewayConfig:
    endpoint: str = DEFAULT_ENDPOINT
    model_id: str = DEFAULT_MODEL
    api_key_env: str = API_KEY_ENV
    temperature: float = 0.0
    max_tokens: int = 2048
    timeout: float = 60.0
    max_attempts: int = 3
    backoff_base: float = 1.0
    backoff_factor: float = 2.0
    jitter: float = 0.2
    max_in_flight: int = 4
    requests_per_minute: Optional[float] = None
    structured_retries: int = 2

    def build(self, mode="live", replay_dir=None, transport=None) -> Gateway:
        store = ReplayStore(replay_dir) if replay_dir is not None else None
        if transport is None and mode != "replay":
            transport = ChatCompletionsTransport(self.endpoint, api_key_env=self.api_key_env,
                                                 timeout=self.timeout)
        interval = 60.0 / self.requests_per_minute if self.requests_per_minute else 0.0
        return Gateway(transport, mode, store, self.max_attempts, self.backoff_base,
                       self.backoff_factor, self.jitter, self.max_in_flight, interval,
                       self.structured_retries)
