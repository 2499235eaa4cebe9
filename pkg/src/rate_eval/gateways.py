"""Chat-completion and web-search gateways.

Each service has a live HTTP provider and a deterministic scripted provider.
Scripted providers are backed by a JSON-lines fixture file whose lines hold
either {"transcript_hash": ..., "response": "..."} for chat or
{"query": ..., "response": [{"title", "snippet", "url"}, ...]} for search.
Chat fixtures are keyed by a stable hash of the message transcript, so a
recorded conversation replays identically across process runs.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import httpx

Message = tuple[str, str]

_ROLES = ("system", "user", "assistant")

RETRYABLE_KINDS = frozenset({"timeout", "rate_limited", "transport"})


class GatewayError(RuntimeError):
    """Gateway failure; `kind` decides retryability."""

    def __init__(self, kind: str, detail: str):
        super().__init__(f"{kind}: {detail}")
        self.kind = kind
        self.detail = detail

    @property
    def retryable(self) -> bool:
        return self.kind in RETRYABLE_KINDS


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[Message, ...]
    temperature: float = 0.0
    max_output: int = 1024

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("ChatRequest: messages must be non-empty")
        for role, _ in self.messages:
            if role not in _ROLES:
                raise ValueError(f"ChatRequest: unknown role {role!r}")
        if self.temperature < 0:
            raise ValueError("ChatRequest: temperature must be >= 0")
        if self.max_output <= 0:
            raise ValueError("ChatRequest: max_output must be positive")


@dataclass(frozen=True)
class ChatResponse:
    content: str
    model_id: str
    token_usage: tuple[int, int] = (0, 0)


@dataclass(frozen=True)
class SearchHit:
    title: str
    snippet: str
    url: str


class LlmGateway(Protocol):
    def chat(self, request: ChatRequest) -> ChatResponse: ...


class SearchGateway(Protocol):
    def search(self, query: str, k: int) -> list[SearchHit]: ...


def transcript_hash(messages: Sequence[Message]) -> str:
    """Stable hex digest of a message transcript (roles and contents only)."""
    canon = json.dumps(
        [[role, content] for role, content in messages],
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _retrying(
    fn: Callable[[], object],
    retries: int,
    backoff_s: float,
    sleep: Callable[[float], None],
):
    attempt = 0
    while True:
        try:
            return fn()
        except GatewayError as exc:
            if not exc.retryable or attempt >= retries:
                raise
            sleep(backoff_s * (2**attempt))
            attempt += 1


def load_fixture_file(path: str | Path) -> tuple[dict[str, str], dict[str, list[SearchHit]]]:
    """Split a fixture file into chat (hash -> text) and search (query -> hits) maps."""
    chat: dict[str, str] = {}
    search: dict[str, list[SearchHit]] = {}
    path = Path(path)
    for line_num, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        if "transcript_hash" in obj:
            chat[obj["transcript_hash"]] = obj["response"]
        elif "query" in obj:
            search[obj["query"]] = [
                SearchHit(h.get("title", ""), h.get("snippet", ""), h["url"])
                for h in obj["response"]
            ]
        else:
            raise ValueError(f"{path}:{line_num}: fixture line lacks transcript_hash/query")
    return chat, search


class ScriptedLlm:
    """Pure chat provider replaying responses keyed by transcript hash."""

    def __init__(self, fixtures: Mapping[str, str] | str | Path):
        if isinstance(fixtures, (str, Path)):
            fixtures, _ = load_fixture_file(fixtures)
        self._fixtures = dict(fixtures)
        self._lock = threading.Lock()
        self.calls: list[ChatRequest] = []

    def chat(self, request: ChatRequest) -> ChatResponse:
        key = transcript_hash(request.messages)
        with self._lock:
            self.calls.append(request)
            if key not in self._fixtures:
                raise GatewayError("malformed", f"no chat fixture for transcript {key}")
            content = self._fixtures[key]
        return ChatResponse(content=content, model_id="scripted")


class ScriptedSearch:
    """Pure search provider replaying fixture hits keyed by the query string."""

    def __init__(self, fixtures: Mapping[str, Sequence[SearchHit]] | str | Path):
        if isinstance(fixtures, (str, Path)):
            _, fixtures = load_fixture_file(fixtures)
        self._fixtures = {q: list(hits) for q, hits in fixtures.items()}
        self._lock = threading.Lock()
        self.calls: list[tuple[str, int]] = []

    def search(self, query: str, k: int) -> list[SearchHit]:
        if not query:
            raise ValueError("search: query must be non-empty")
        if k <= 0:
            raise ValueError("search: k must be positive")
        with self._lock:
            self.calls.append((query, k))
            hits = self._fixtures.get(query, [])
            return list(hits[:k])


@dataclass
class GatewaySettings:
    """Connection settings shared by the live providers."""

    llm_endpoint: str = ""
    llm_model: str = ""
    search_endpoint: str = ""
    timeout_s: float = 30.0
    retries: int = 2
    backoff_s: float = 1.0
    max_output: int = 1024  # cap on completion tokens sent to the live provider


class HttpLlm:
    """Live chat provider speaking a JSON chat-completion wire format.

    POSTs {model, messages, temperature, max_tokens} and reads
    choices[0].message.content; the API key comes from LLM_API_KEY.
    """

    def __init__(
        self,
        settings: GatewaySettings,
        api_key: str | None = None,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self._settings = settings
        self._api_key = api_key if api_key is not None else os.environ.get("LLM_API_KEY", "")
        self._client = httpx.Client(timeout=settings.timeout_s, transport=transport)
        self._sleep = sleep
        self.last_attempts = 0

    def chat(self, request: ChatRequest) -> ChatResponse:
        payload = {
            "model": self._settings.llm_model,
            "messages": [{"role": r, "content": c} for r, c in request.messages],
            "temperature": request.temperature,
            "max_tokens": min(request.max_output, self._settings.max_output),
        }
        self.last_attempts = 0

        def attempt() -> ChatResponse:
            self.last_attempts += 1
            try:
                resp = self._client.post(
                    self._settings.llm_endpoint,
                    json=payload,
                    headers={"Authorization": f"Bearer {self._api_key}"},
                )
            except httpx.TimeoutException as exc:
                raise GatewayError("timeout", str(exc)) from exc
            except httpx.HTTPError as exc:
                raise GatewayError("transport", str(exc)) from exc
            if resp.status_code == 429:
                raise GatewayError("rate_limited", "HTTP 429")
            if resp.status_code >= 500:
                raise GatewayError("transport", f"HTTP {resp.status_code}")
            if resp.status_code != 200:
                raise GatewayError("malformed", f"HTTP {resp.status_code}")
            try:
                body = resp.json()
                content = body["choices"][0]["message"]["content"]
            except (ValueError, LookupError, TypeError) as exc:
                raise GatewayError("malformed", f"unexpected response body: {exc}") from exc
            if content is None:
                content = ""
            usage = body.get("usage", {})
            return ChatResponse(
                content=content,
                model_id=body.get("model", self._settings.llm_model),
                token_usage=(
                    int(usage.get("prompt_tokens", 0)),
                    int(usage.get("completion_tokens", 0)),
                ),
            )

        return _retrying(attempt, self._settings.retries, self._settings.backoff_s, self._sleep)


class HttpSearch:
    """Live search provider hitting a JSON endpoint returning {results: [...]}."""

    def __init__(
        self,
        settings: GatewaySettings,
        api_key: str | None = None,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self._settings = settings
        self._api_key = api_key if api_key is not None else os.environ.get("SEARCH_API_KEY", "")
        self._client = httpx.Client(timeout=settings.timeout_s, transport=transport)
        self._sleep = sleep

    def search(self, query: str, k: int) -> list[SearchHit]:
        if not query:
            raise ValueError("search: query must be non-empty")

        def attempt() -> list[SearchHit]:
            try:
                resp = self._client.get(
                    self._settings.search_endpoint,
                    params={"q": query, "count": k},
                    headers={"Authorization": f"Bearer {self._api_key}"},
                )
            except httpx.TimeoutException as exc:
                raise GatewayError("timeout", str(exc)) from exc
            except httpx.HTTPError as exc:
                raise GatewayError("transport", str(exc)) from exc
            if resp.status_code == 429:
                raise GatewayError("rate_limited", "HTTP 429")
            if resp.status_code >= 500:
                raise GatewayError("transport", f"HTTP {resp.status_code}")
            if resp.status_code != 200:
                raise GatewayError("malformed", f"HTTP {resp.status_code}")
            try:
                results = resp.json()["results"]
                hits = [
                    SearchHit(h.get("title", ""), h.get("snippet", ""), h["url"])
                    for h in results
                ]
            except (ValueError, LookupError, TypeError) as exc:
                raise GatewayError("malformed", f"unexpected response body: {exc}") from exc
            return hits[:k]

        return _retrying(attempt, self._settings.retries, self._settings.backoff_s, self._sleep)


class RecordingLlm:
    """Wrapper capturing (transcript hash -> response) pairs for fixture files."""

    def __init__(self, inner: LlmGateway):
        self._inner = inner
        self.recorded: dict[str, str] = {}

    def chat(self, request: ChatRequest) -> ChatResponse:
        response = self._inner.chat(request)
        self.recorded[transcript_hash(request.messages)] = response.content
        return response


class RecordingSearch:
    """Wrapper capturing (query -> hits) pairs for fixture files."""

    def __init__(self, inner: SearchGateway):
        self._inner = inner
        self.recorded: dict[str, list[SearchHit]] = {}

    def search(self, query: str, k: int) -> list[SearchHit]:
        hits = self._inner.search(query, k)
        existing = self.recorded.get(query, [])
        if len(hits) > len(existing):
            self.recorded[query] = list(hits)
        return hits


def write_fixture_file(
    path: str | Path,
    chat: Mapping[str, str] | None = None,
    search: Mapping[str, Iterable[SearchHit]] | None = None,
) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for key in sorted(chat or {}):
            fh.write(
                json.dumps(
                    {"transcript_hash": key, "response": (chat or {})[key]},
                    ensure_ascii=False,
                )
                + "\n"
            )
        for query in sorted(search or {}):
            hits = [
                {"title": h.title, "snippet": h.snippet, "url": h.url}
                for h in (search or {})[query]
            ]
            fh.write(json.dumps({"query": query, "response": hits}, ensure_ascii=False) + "\n")
