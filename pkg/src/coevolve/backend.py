"""Model-completion backends with token/call accounting.

Two implementations share one interface: an HTTP client speaking the common
chat-completions JSON protocol, and a deterministic scripted backend that
replays a transcript for tests and offline runs.
"""

from __future__ import annotations

import json
import random
import threading
import time
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Protocol

import httpx

from .core import UsageLedger


class AgentRole(Enum):
    """One member per prompt template."""

    INITIAL_PLAN = "InitialPlan"
    INITIAL_CODE = "InitialCode"
    DIAGNOSTIC_ANALYSIS = "DiagnosticAnalysis"
    CDM_SCORING = "CdmScoring"
    RT_UPDATE = "RtUpdate"
    PLAN_REFINE = "PlanRefine"
    CODE_AFTER_PLAN = "CodeAfterPlan"
    CODE_REFINE = "CodeRefine"


class BackendError(Exception):
    """Base class for completion-backend failures."""


class NetworkError(BackendError):
    """Transport or server failure that survived the retry policy."""


class RateLimited(BackendError):
    """HTTP 429 still present after the final retry."""


class TranscriptUnderflow(BackendError):
    """The scripted queue for the requested role is empty."""


class TranscriptMismatch(BackendError):
    """No queued entry's match substring is present in the prompt."""


@dataclass(frozen=True)
class BackendRequest:
    role: AgentRole
    prompt: str
    decoding: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("prompt must be nonempty")


@dataclass(frozen=True)
class BackendResponse:
    """Completion text plus token usage as counted by the producing backend.

    Token counts are never re-estimated downstream.
    """

    text: str
    tokens_in: int
    tokens_out: int


def count_tokens_scripted(text: str) -> int:
    """Deterministic token stand-in: number of maximal whitespace-separated runs."""
    return len(text.split())


class Backend(Protocol):
    def complete(self, request: BackendRequest) -> BackendResponse: ...


@dataclass(frozen=True)
class TranscriptEntry:
    """One scripted completion; when match is set, the incoming prompt must
    contain it for the entry to be served."""

    role: AgentRole
    response: str
    match: str | None = None


@dataclass(frozen=True)
class Exchange:
    """A consumed scripted call, kept for post-hoc assertions."""

    role: AgentRole
    prompt: str
    response: str


class ScriptedBackend:
    """Replays a transcript of per-role completions, deterministically.

    Entries are held in per-role queues. A request consumes the oldest entry
    of its role whose match constraint is satisfied, so entries keyed to
    different problems by match substrings are served in order per problem
    even when runs interleave concurrently.
    """

    def __init__(self, entries: Iterable[TranscriptEntry]):
        self._queues: dict[AgentRole, deque[TranscriptEntry]] = {
            role: deque() for role in AgentRole
        }
        for entry in entries:
            self._queues[entry.role].append(entry)
        self._history: list[Exchange] = []
        self._lock = threading.Lock()

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "ScriptedBackend":
        """Load a transcript file: one {"role", "response", "match"?} object per line."""
        entries = []
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    raw = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{lineno}: invalid JSON: {exc}") from None
                try:
                    role = AgentRole(raw["role"])
                except (KeyError, ValueError):
                    raise ValueError(
                        f"{path}:{lineno}: unknown or missing role {raw.get('role')!r}"
                    ) from None
                response = raw.get("response")
                if not isinstance(response, str):
                    raise ValueError(f"{path}:{lineno}: 'response' must be a string")
                entries.append(TranscriptEntry(role, response, raw.get("match")))
        return cls(entries)

    def complete(self, request: BackendRequest) -> BackendResponse:
        with self._lock:
            queue = self._queues[request.role]
            if not queue:
                raise TranscriptUnderflow(
                    f"no scripted entries left for role {request.role.value}"
                )
            index = next(
                (
                    i
                    for i, entry in enumerate(queue)
                    if entry.match is None or entry.match in request.prompt
                ),
                None,
            )
            if index is None:
                wanted = [e.match for e in queue]
                raise TranscriptMismatch(
                    f"no entry for role {request.role.value} matches the prompt; "
                    f"pending match constraints: {wanted!r}"
                )
            entry = queue[index]
            del queue[index]
            self._history.append(Exchange(request.role, request.prompt, entry.response))
        return BackendResponse(
            text=entry.response,
            tokens_in=count_tokens_scripted(request.prompt),
            tokens_out=count_tokens_scripted(entry.response),
        )

    @property
    def history(self) -> tuple[Exchange, ...]:
        with self._lock:
            return tuple(self._history)

    def remaining(self) -> int:
        with self._lock:
            return sum(len(q) for q in self._queues.values())


# Statuses retried with backoff; everything else non-2xx fails immediately.
_RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})


class HttpBackend:
    """Chat-completions HTTP client with retry/backoff and usage accounting.

    Sends one user message per request; the decoding map is merged into the
    JSON payload verbatim. Usage is read from the provider response.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        *,
        timeout_seconds: float = 60.0,
        max_retries: int = 3,
        transport: httpx.BaseTransport | None = None,
        sleeper: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        self._endpoint = endpoint
        self._model = model
        self._api_key = api_key
        self._max_retries = max_retries
        self._sleeper = sleeper
        self._rng = rng or random.Random()
        self._client = httpx.Client(timeout=timeout_seconds, transport=transport)

    def close(self) -> None:
        self._client.close()

    def complete(self, request: BackendRequest) -> BackendResponse:
        payload: dict[str, Any] = {
            "model": self._model,
            "messages": [{"role": "user", "content": request.prompt}],
        }
        payload.update(request.decoding)
        headers = {}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"

        last_status: int | None = None
        last_error: Exception | None = None
        for attempt in range(self._max_retries + 1):
            if attempt:
                # Full-jitter exponential backoff: 1s base, doubling per attempt.
                self._sleeper(self._rng.uniform(0.0, float(2 ** (attempt - 1))))
            try:
                response = self._client.post(
                    self._endpoint, json=payload, headers=headers
                )
            except httpx.HTTPError as exc:
                last_error, last_status = exc, None
                continue
            if response.status_code in _RETRYABLE_STATUS:
                last_status, last_error = response.status_code, None
                continue
            if response.status_code != 200:
                raise NetworkError(
                    f"backend returned HTTP {response.status_code}: {response.text[:200]}"
                )
            return self._parse(response)

        if last_status == 429:
            raise RateLimited(f"still rate limited after {self._max_retries} retries")
        detail = last_error if last_error is not None else f"HTTP {last_status}"
        raise NetworkError(f"backend unreachable after {self._max_retries} retries: {detail}")

    @staticmethod
    def _parse(response: httpx.Response) -> BackendResponse:
        try:
            data = response.json()
            text = data["choices"][0]["message"]["content"]
        except (ValueError, LookupError, TypeError) as exc:
            raise NetworkError(f"malformed completion response: {exc}") from None
        usage = data.get("usage") or {}
        return BackendResponse(
            text=text,
            tokens_in=int(usage.get("prompt_tokens", 0)),
            tokens_out=int(usage.get("completion_tokens", 0)),
        )


class RunBackend:
    """Per-run view of a backend: applies configured decoding defaults and
    appends one ledger entry per successful call (failed calls record nothing)."""

    def __init__(
        self,
        inner: Backend,
        ledger: UsageLedger,
        decoding: Mapping[str, Any] | None = None,
    ):
        self._inner = inner
        self._ledger = ledger
        self._decoding = dict(decoding or {})

    def complete(self, request: BackendRequest) -> BackendResponse:
        if self._decoding and not request.decoding:
            request = replace(request, decoding=dict(self._decoding))
        response = self._inner.complete(request)
        self._ledger.record(request.role.value, response.tokens_in, response.tokens_out)
        return response
