"""LLM transport with deterministic mock backends and output parsers.

Every backend implements ``complete(request) -> str``. The remote backend
sees only ``request.prompt`` and ``request.temperature``; mocks may read the
structured fields (the ad being rewritten, the ranked ads) so that they stay
pure functions of their input.

Remote wire protocol: ``POST {"prompt": ..., "temperature": t}`` answered by
``{"text": ...}``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import httpx

from .corpus import AdDocument, Query, RewritePair, ad_text
from .errors import ParseError, TransportError
from .prompts import PromptKind, format_context, render_prompt

logger = logging.getLogger(__name__)

LLM_URL_ENV = "ADREWRITE_LLM_URL"
LLM_API_KEY_ENV = "ADREWRITE_LLM_API_KEY"

LLM_KINDS = ("remote-chat", "mock-echo", "mock-topk-citer")
QUERY_GENERATION = "query-generation"

QUERY_GENERATION_PROMPT = """\
Write {n} distinct search queries that a user interested in {subdomain} ({domain}) might type into a search engine or chatbot. Return one query per line with no extra commentary."""


@dataclass(frozen=True)
class LlmDescriptor:
    kind: str = "mock-echo"
    endpoint: str | None = None
    model_name: str | None = None
    temperature: float = 0.0
    max_in_flight: int = 4
    retry_limit: int = 3
    timeout: float = 60.0
    cache_dir: str | None = None

    def __post_init__(self):
        if self.kind not in LLM_KINDS:
            raise ValueError(f"unknown llm kind {self.kind!r}")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.retry_limit < 0:
            raise ValueError("retry_limit must be >= 0")
        if self.kind == "remote-chat" and not (self.endpoint or os.environ.get(LLM_URL_ENV)):
            raise ValueError("remote-chat llm requires an endpoint")


@dataclass(frozen=True)
class LlmRequest:
    kind: PromptKind | str
    prompt: str
    temperature: float = 0.0
    ad: AdDocument | None = None
    ads: tuple[AdDocument, ...] = ()
    query: Query | None = None
    extra: dict = field(default_factory=dict, compare=False)


class LlmBackend(Protocol):
    temperature: float

    def complete(self, request: LlmRequest) -> str: ...


@dataclass(frozen=True)
class ParsedRewrite:
    title: str
    description: str
    raw: str


# ---------------------------------------------------------------------------
# mocks


def _echo_rewrite(req: LlmRequest) -> str:
    return f"Title: {req.ad.title}\nDescription: {req.ad.description}"


class MockEchoLlm:
    """Returns every ad unchanged and cites nothing when answering."""

    def __init__(self, temperature: float = 0.0):
        self.temperature = temperature

    def answer(self, req: LlmRequest) -> str:
        return f"Here is some general advice about: {req.query.text if req.query else ''}"

    def complete(self, req: LlmRequest) -> str:
        if req.kind == QUERY_GENERATION:
            d, s, n = req.extra["domain"], req.extra["subdomain"], req.extra["n"]
            return "\n".join(f"{i}. {s} {d} recommendation {i}" for i in range(1, n + 1))
        if PromptKind(req.kind) is PromptKind.INCLUSION_ANSWER:
            return self.answer(req)
        return _echo_rewrite(req)


class MockTopkCiterLlm(MockEchoLlm):
    """Like :class:`MockEchoLlm` but cites exactly the highest-ranked ad."""

    def answer(self, req: LlmRequest) -> str:
        if not req.ads:
            return "I could not find a matching product."
        top = req.ads[0]
        return f"You might like {top.title}. {top.description}\nid: {top.id}"


class ScriptedLlm:
    """Backend driven by a plain function of the request (tests, demos)."""

    def __init__(self, fn: Callable[[LlmRequest], str], temperature: float = 0.0):
        self.fn = fn
        self.temperature = temperature

    def complete(self, req: LlmRequest) -> str:
        return self.fn(req)


# ---------------------------------------------------------------------------
# remote


class RemoteChatLlm:
    """HTTP chat client with retries and a shared in-flight cap; responses can be cached on disk."""

    def __init__(
        self,
        endpoint: str,
        model_name: str | None = None,
        temperature: float = 0.0,
        max_in_flight: int = 4,
        retry_limit: int = 3,
        timeout: float = 60.0,
        backoff: float = 1.0,
        cache_dir: str | Path | None = None,
        api_key: str | None = None,
        transport: httpx.BaseTransport | None = None,
    ):
        self.endpoint = endpoint
        self.model_name = model_name
        self.temperature = temperature
        self.retry_limit = retry_limit
        self.backoff = backoff
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self._slots = threading.BoundedSemaphore(max_in_flight)
        headers = {}
        api_key = api_key or os.environ.get(LLM_API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(timeout=timeout, transport=transport, headers=headers)

    def close(self):
        self._client.close()

    def _cache_path(self, prompt: str, temperature: float) -> Path | None:
        if self.cache_dir is None:
            return None
        key = hashlib.sha256(
            json.dumps([prompt, self.model_name, temperature]).encode("utf-8")
        ).hexdigest()
        return self.cache_dir / f"{key}.json"

    def complete(self, req: LlmRequest) -> str:
        cached = self._cache_path(req.prompt, req.temperature)
        if cached is not None and cached.exists():
            return json.loads(cached.read_text(encoding="utf-8"))["text"]
        body = {"prompt": req.prompt, "temperature": req.temperature}
        if self.model_name:
            body["model"] = self.model_name
        last_exc: Exception | None = None
        for attempt in range(self.retry_limit + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                with self._slots:
                    resp = self._client.post(self.endpoint, json=body)
                resp.raise_for_status()
                text = resp.json()["text"]
                if not isinstance(text, str):
                    raise TypeError("'text' is not a string")
            except (httpx.HTTPError, KeyError, ValueError, TypeError) as exc:
                last_exc = exc
                logger.warning("llm request failed (attempt %d): %s", attempt + 1, exc)
                continue
            if cached is not None:
                cached.parent.mkdir(parents=True, exist_ok=True)
                cached.write_text(json.dumps({"text": text}), encoding="utf-8")
            return text
        raise TransportError(f"llm endpoint {self.endpoint} failed: {last_exc}")


def make_llm(desc: LlmDescriptor, **kwargs) -> LlmBackend:
    if desc.kind == "mock-echo":
        return MockEchoLlm(desc.temperature)
    if desc.kind == "mock-topk-citer":
        return MockTopkCiterLlm(desc.temperature)
    return RemoteChatLlm(
        os.environ.get(LLM_URL_ENV) or desc.endpoint,
        model_name=desc.model_name,
        temperature=desc.temperature,
        max_in_flight=desc.max_in_flight,
        retry_limit=desc.retry_limit,
        timeout=desc.timeout,
        cache_dir=desc.cache_dir,
        **kwargs,
    )


def _as_backend(llm: LlmBackend | LlmDescriptor) -> LlmBackend:
    return make_llm(llm) if isinstance(llm, LlmDescriptor) else llm


def _call(llm: LlmBackend, req: LlmRequest) -> str:
    try:
        return llm.complete(req)
    except TransportError:
        raise
    except httpx.HTTPError as exc:
        raise TransportError(str(exc)) from exc


# ---------------------------------------------------------------------------
# parsers

_TITLE = re.compile(r"(?<![A-Za-z])\**Title\**\s*:\**")
_DESC = re.compile(r"(?<![A-Za-z])\**Description\**\s*:\**")
_BLANK = re.compile(r"\n\s*\n")


def _clean(text: str) -> str:
    text = " ".join(text.split())
    text = text.strip("*").strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'`":
        text = text[1:-1].strip()
    return text


def parse_rewrite(raw: str, strategy: PromptKind | str | None = None) -> ParsedRewrite:
    """Extract the final ``Title: ... Description: ...`` pair from model output.

    The last ``Title:`` that is followed by a ``Description:`` wins, so
    reasoning text that mentions the labels earlier does not interfere. The
    description runs to the end of its line (or of its line after the label,
    when the label stands alone).
    """
    titles = list(_TITLE.finditer(raw or ""))
    for t in reversed(titles):
        d = _DESC.search(raw, t.end())
        if d is None:
            continue
        title = _clean(raw[t.end():d.start()])
        rest = raw[d.end():].lstrip()
        desc = _clean(rest.split("\n", 1)[0]) if rest else ""
        if not title or not desc:
            break
        return ParsedRewrite(title=title, description=desc, raw=raw)
    raise ParseError("no Title/Description pair in model output", raw=raw)


_TOK = r"[\w\-#/]+(?:\.[\w\-#/]+)*"
_ID_LINE = re.compile(
    rf"^[\s'\"`*\[(>\-]*(?:[A-Za-z][A-Za-z ()]{{0,40}}:\s*)?"
    rf"(id:\s*{_TOK}(?:\s*,\s*id:\s*{_TOK})*)"
    rf"[\s.!;,)\]'\"`*]*$",
    re.IGNORECASE,
)
_ID_TOKEN = re.compile(rf"id:\s*({_TOK})", re.IGNORECASE)


def parse_inclusion(raw: str) -> set[str]:
    """Ids listed on the last ``id: a, id: b`` line of ``raw`` (empty if none)."""
    for line in reversed((raw or "").splitlines()):
        m = _ID_LINE.match(line)
        if m:
            return set(_ID_TOKEN.findall(m.group(1)))
    return set()


# ---------------------------------------------------------------------------
# operations


def rewrite(
    ad: AdDocument,
    strategy: PromptKind | str,
    llm: LlmBackend | LlmDescriptor,
) -> RewritePair:
    """Rewrite ``ad`` with one of the rewrite strategies.

    Raises :class:`ParseError` (with ``raw`` set) when the output has no
    usable Title/Description, :class:`TransportError` when the backend fails.
    """
    strategy = PromptKind(strategy)
    if not strategy.is_rewrite:
        raise ValueError(f"{strategy.value} is not a rewrite strategy")
    llm = _as_backend(llm)
    prompt = render_prompt(strategy, {"ad": ad_text(ad)})
    raw = _call(llm, LlmRequest(strategy, prompt, llm.temperature, ad=ad))
    parsed = parse_rewrite(raw, strategy)
    return RewritePair(ad.id, ad, ad.with_text(parsed.title, parsed.description), strategy.value)


def answer_with_ads(
    query: Query,
    ads: Sequence[AdDocument],
    llm: LlmBackend | LlmDescriptor,
) -> tuple[str, set[str]]:
    """Answer ``query`` from the ranked ``ads``; return the text and cited ids."""
    if not ads:
        raise ValueError("answer_with_ads needs at least one ad")
    llm = _as_backend(llm)
    prompt = render_prompt(
        PromptKind.INCLUSION_ANSWER,
        {"query": query.text, "context": format_context(ads)},
    )
    text = _call(llm, LlmRequest(PromptKind.INCLUSION_ANSWER, prompt, llm.temperature, ads=tuple(ads), query=query))
    return text, parse_inclusion(text)


_NUMBERING = re.compile(r"^\s*(?:[-*\u2022]|\d+[.)])\s*")


def generate_queries(
    domain: str,
    subdomain: str,
    n: int,
    llm: LlmBackend | LlmDescriptor,
) -> list[str]:
    """Ask the LLM for ``n`` user queries about a domain/subdomain pair."""
    llm = _as_backend(llm)
    prompt = QUERY_GENERATION_PROMPT.format(n=n, domain=domain, subdomain=subdomain)
    raw = _call(llm, LlmRequest(
        QUERY_GENERATION, prompt, llm.temperature,
        extra={"domain": domain, "subdomain": subdomain, "n": n},
    ))
    lines = [_NUMBERING.sub("", line).strip().strip('"') for line in raw.splitlines()]
    out = list(dict.fromkeys(line for line in lines if line))
    if not out:
        raise ParseError("model returned no queries", raw=raw)
    return out[:n]
