"""Chat-completion backends: http, scripted, and record/replay cassettes.

All backends expose ``complete(request) -> CompletionResponse``. The cassette
file format is line-delimited and documented in docs/formats.md: each record
is ``A1 <sha256-hex> <payload-byte-length> <base64(canonical-json-response)>``.
"""

from __future__ import annotations

import base64
import hashlib
import json
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .errors import BackendError, CassetteMissError, ScriptExhaustedError
from .kernel import ToolCall

CASSETTE_MAGIC = "A1"


@dataclass
class CompletionRequest:
    model: str
    messages: list[dict[str, str]]
    tools: list | None = None  # list[ToolSchema] in direct mode, else None
    mode: str = "transformed"


@dataclass
class CompletionResponse:
    """Either assistant text or (direct mode only) a structured tool call."""

    text: str | None = None
    tool_call: ToolCall | None = None

    def __post_init__(self):
        if (self.text is None) == (self.tool_call is None):
            raise ValueError("exactly one of text/tool_call must be set")


@dataclass
class RetryPolicy:
    max_attempts: int = 3
    backoff_start: float = 0.5
    backoff_factor: float = 2.0
    sleep: Callable[[float], None] = time.sleep


class TransientBackendError(BackendError):
    """Transport failure or HTTP >= 500; eligible for retry."""


def _schema_dict(schema) -> dict:
    return {
        "name": schema.name,
        "description": schema.description,
        "parameters": [
            {"name": p.name, "description": p.description, "required": p.required}
            for p in schema.parameters
        ],
    }


def request_digest(request: CompletionRequest) -> str:
    """Stable content hash of (model, messages, tool schemas, mode)."""
    body = {
        "model": request.model,
        "messages": request.messages,
        "tools": [_schema_dict(s) for s in request.tools] if request.tools else None,
        "mode": request.mode,
    }
    blob = json.dumps(body, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def _encode_response(response: CompletionResponse) -> str:
    body: dict = {"text": response.text, "tool_call": None}
    if response.tool_call is not None:
        body["tool_call"] = {
            "name": response.tool_call.tool_name,
            "arguments": dict(response.tool_call.arguments),
        }
    return json.dumps(body, sort_keys=True, separators=(",", ":"))


def _decode_response(blob: str) -> CompletionResponse:
    body = json.loads(blob)
    call = None
    if body.get("tool_call"):
        call = ToolCall(body["tool_call"]["name"], dict(body["tool_call"]["arguments"]))
    return CompletionResponse(text=body.get("text"), tool_call=call)


# ---------------------------------------------------------------------------
# scripted
# ---------------------------------------------------------------------------

class ScriptedBackend:
    """Pops pre-authored steps in order; thread-safe, single pass.

    A step is a literal final text, a structured ToolCall, or a
    deterministic callable (request -> text or ToolCall).
    """

    kind = "scripted"

    def __init__(self, steps):
        self._steps = deque(steps)
        self._lock = threading.Lock()
        self.calls = 0

    def __len__(self) -> int:
        return len(self._steps)

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        with self._lock:
            if not self._steps:
                raise ScriptExhaustedError("scripted backend has no steps left")
            step = self._steps.popleft()
            self.calls += 1
        if callable(step) and not isinstance(step, ToolCall):
            step = step(request)
        if isinstance(step, ToolCall):
            return CompletionResponse(tool_call=step)
        return CompletionResponse(text=str(step))


# ---------------------------------------------------------------------------
# http (OpenAI-compatible chat completions)
# ---------------------------------------------------------------------------

class HttpBackend:
    kind = "http_openai_like"

    def __init__(self, base_url: str, api_key: str = "", timeout: float = 60.0,
                 transport: Callable | None = None):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.timeout = timeout
        self._transport = transport  # test seam: (url, json, headers) -> (status, body)

    def _post(self, url: str, payload: dict, headers: dict) -> tuple[int, dict]:
        if self._transport is not None:
            return self._transport(url, payload, headers)
        import requests

        try:
            resp = requests.post(url, json=payload, headers=headers, timeout=self.timeout)
        except requests.RequestException as err:
            raise TransientBackendError(f"transport failure: {err}") from err
        try:
            body = resp.json()
        except ValueError:
            body = {}
        return resp.status_code, body

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        payload: dict = {"model": request.model, "messages": request.messages}
        if request.mode == "direct" and request.tools:
            payload["tools"] = [{
                "type": "function",
                "function": {
                    "name": s.name,
                    "description": s.description,
                    "parameters": {
                        "type": "object",
                        "properties": {
                            p.name: {"type": "string", "description": p.description}
                            for p in s.parameters
                        },
                        "required": [p.name for p in s.parameters if p.required],
                    },
                },
            } for s in request.tools]
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        status, body = self._post(f"{self.base_url}/chat/completions", payload, headers)
        if status >= 500:
            raise TransientBackendError(f"server error {status}")
        if status >= 400:
            raise BackendError(f"request rejected with status {status}")

        try:
            message = body["choices"][0]["message"]
        except (KeyError, IndexError, TypeError):
            raise BackendError("malformed completion payload")
        calls = message.get("tool_calls") or []
        if calls:
            fn = calls[0].get("function", {})
            try:
                raw = json.loads(fn.get("arguments") or "{}")
            except ValueError:
                raw = {}
            args = {k: v if isinstance(v, str) else json.dumps(v) for k, v in raw.items()}
            return CompletionResponse(tool_call=ToolCall(fn.get("name", ""), args))
        return CompletionResponse(text=message.get("content") or "")


# ---------------------------------------------------------------------------
# cassette
# ---------------------------------------------------------------------------

class CassetteBackend:
    """Record/replay by request digest.

    Replay consumes records per digest in file order, so a request that
    recurs byte-identically (loop retries) replays its distinct responses
    in the order they were recorded.
    """

    kind = "cassette"

    def __init__(self, path: str | Path, mode: str, inner=None):
        if mode not in ("record", "replay"):
            raise ValueError(f"bad cassette mode: {mode}")
        self.path = Path(path)
        self.mode = mode
        self.inner = inner
        self._lock = threading.Lock()
        self._queues: dict[str, deque] = {}
        if mode == "replay":
            self._load()

    def _load(self) -> None:
        if not self.path.exists():
            raise CassetteMissError(f"cassette not found: {self.path}")
        for lineno, line in enumerate(self.path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                magic, digest, length, blob = line.split(" ", 3)
                if magic != CASSETTE_MAGIC or int(length) != len(blob.encode("utf-8")):
                    raise ValueError
                decoded = base64.b64decode(blob.encode("ascii")).decode("utf-8")
            except (ValueError, IndexError):
                raise BackendError(f"corrupt cassette record at line {lineno}")
            self._queues.setdefault(digest, deque()).append(decoded)

    def _append(self, digest: str, response: CompletionResponse) -> None:
        blob = base64.b64encode(_encode_response(response).encode("utf-8")).decode("ascii")
        record = f"{CASSETTE_MAGIC} {digest} {len(blob.encode('utf-8'))} {blob}\n"
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(record)

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        digest = request_digest(request)
        if self.mode == "replay":
            with self._lock:
                queue = self._queues.get(digest)
                if not queue:
                    raise CassetteMissError(f"no recorded response for digest {digest[:12]}")
                blob = queue.popleft()
            return _decode_response(blob)
        if self.inner is None:
            raise BackendError("record mode requires an inner backend")
        response = self.inner.complete(request)
        self._append(digest, response)
        return response


# ---------------------------------------------------------------------------
# retry wrapper
# ---------------------------------------------------------------------------

def backend_complete(request: CompletionRequest, backend,
                     retry: RetryPolicy | None = None) -> CompletionResponse:
    """Call the backend, retrying transient failures with exponential backoff.

    Scripted exhaustion and cassette misses are hard errors and propagate
    immediately.
    """
    retry = retry or RetryPolicy()
    delay = retry.backoff_start
    last: Exception | None = None
    for attempt in range(retry.max_attempts):
        try:
            return backend.complete(request)
        except (ScriptExhaustedError, CassetteMissError):
            raise
        except TransientBackendError as err:
            last = err
            if attempt + 1 < retry.max_attempts:
                retry.sleep(delay)
                delay *= retry.backoff_factor
    raise BackendError(f"backend failed after {retry.max_attempts} attempts: {last}")
