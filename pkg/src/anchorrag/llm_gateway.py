"""Every LLM interaction goes through here.

Prompt templates are plain-text assets in ``anchorrag/prompts``. A slot is
written ``<Name>`` in the template; the width slot of the relation-pruning
prompt is written ``%s`` and filled from the ``Width`` slot. Template lines
starting with ``#!`` are asset comments and are dropped on load.

:class:`LlmGateway` adds a record/replay cache on top of any backend, so a
recorded session can be re-run offline with byte-identical responses.
"""
from __future__ import annotations

import enum
import hashlib
import json
import os
import re
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping, NamedTuple, Sequence, Union

import httpx

from .kg_store import Triple


class TemplateId(str, enum.Enum):
    KEYWORD_EXTRACTION = "keyword_extraction"
    RELATION_PRUNING = "relation_pruning"
    ENTITY_PRUNING = "entity_pruning"
    TRIPLE_FILTERING = "triple_filtering"
    SUFFICIENCY_EVALUATION = "sufficiency_evaluation"
    COT_FALLBACK = "cot_fallback"


class Mode(str, enum.Enum):
    RECORD = "record"
    REPLAY = "replay"
    LIVE = "live"


class RenderError(KeyError):
    pass


class TransportError(RuntimeError):
    """Raised by backends for failures worth retrying."""


class ProviderError(RuntimeError):
    pass


class CacheMissError(LookupError):
    def __init__(self, fingerprint: str):
        super().__init__(f"no recorded response for request {fingerprint}")
        self.fingerprint = fingerprint


class CallBudgetExceeded(RuntimeError):
    pass


class ScoreParseError(ValueError):
    pass


class VerdictParseError(ValueError):
    pass


RETRY_REMINDER = "\n\nRespond in the exact format shown above."

_SLOT = re.compile(r"<([A-Z][A-Za-z ]*)>|%s")


@lru_cache(maxsize=None)
def template_text(template_id: TemplateId | str) -> str:
    tid = TemplateId(template_id)
    raw = resources.files("anchorrag").joinpath("prompts", f"{tid.value}.txt").read_text(encoding="utf-8")
    lines = [ln for ln in raw.splitlines() if not ln.startswith("#!")]
    return "\n".join(lines).rstrip("\n")


def template_slots(template_id: TemplateId | str) -> set[str]:
    return {m.group(1) or "Width" for m in _SLOT.finditer(template_text(template_id))}


def render_prompt(template_id: TemplateId | str, slots: Mapping[str, str]) -> str:
    missing = sorted(template_slots(template_id) - set(slots))
    if missing:
        raise RenderError(f"{TemplateId(template_id).value}: missing slot(s) {', '.join(missing)}")
    # single pass, so slot values are never re-scanned for markers
    return _SLOT.sub(lambda m: str(slots[m.group(1) or "Width"]), template_text(template_id))


@dataclass(frozen=True)
class LlmRequest:
    template_id: TemplateId
    prompt: str
    temperature: float = 0.0
    max_tokens: int = 512

    def __post_init__(self):
        if not self.prompt.strip():
            raise ValueError("empty prompt")

    @property
    def fingerprint(self) -> str:
        payload = json.dumps(
            [TemplateId(self.template_id).value, self.prompt, self.temperature, self.max_tokens],
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class LlmResponse:
    text: str
    source: str  # "network" or "replay"
    fingerprint: str
    usage: Mapping[str, int] = field(default_factory=dict)


BackendResult = Union[str, tuple[str, Mapping[str, int]]]
Backend = Callable[[LlmRequest], BackendResult]


class ReplayCache:
    """Append-only JSON-lines store of ``{fingerprint, template_id, prompt, response}``."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._entries: dict[str, str] = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._entries[rec["fingerprint"]] = rec["response"]

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, fingerprint: str) -> bool:
        return fingerprint in self._entries

    def get(self, fingerprint: str) -> str | None:
        return self._entries.get(fingerprint)

    def put(self, request: LlmRequest, response: str) -> None:
        fp = request.fingerprint
        with self._lock:
            if fp in self._entries:
                return
            self._entries[fp] = response
            if self.path:
                rec = {
                    "fingerprint": fp,
                    "template_id": TemplateId(request.template_id).value,
                    "prompt": request.prompt,
                    "response": response,
                }
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


class ChatCompletionClient:
    """Backend for an OpenAI-style ``POST {base_url}/chat/completions`` API."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str | None = "OPENAI_API_KEY",
        max_in_flight: int = 4,
        requests_per_minute: float | None = None,
        timeout: float = 60.0,
        client: httpx.Client | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self._client = client or httpx.Client(timeout=timeout)
        self._gate = threading.BoundedSemaphore(max_in_flight)
        self._interval = 60.0 / requests_per_minute if requests_per_minute else 0.0
        self._next_slot = 0.0
        self._slot_lock = threading.Lock()

    def _wait_for_slot(self) -> None:
        if not self._interval:
            return
        with self._slot_lock:
            now = time.monotonic()
            start = max(now, self._next_slot)
            self._next_slot = start + self._interval
        if start > now:
            time.sleep(start - now)

    def __call__(self, request: LlmRequest) -> tuple[str, dict[str, int]]:
        headers = {}
        if self.api_key_env and os.environ.get(self.api_key_env):
            headers["Authorization"] = f"Bearer {os.environ[self.api_key_env]}"
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        self._wait_for_slot()
        try:
            with self._gate:
                resp = self._client.post(f"{self.base_url}/chat/completions", json=body, headers=headers)
        except httpx.HTTPError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransportError(f"HTTP {resp.status_code}")
        resp.raise_for_status()
        data = resp.json()
        usage = {k: int(v) for k, v in (data.get("usage") or {}).items() if isinstance(v, int)}
        return data["choices"][0]["message"]["content"] or "", usage


class CallRecord(NamedTuple):
    template_id: str
    fingerprint: str
    source: str


class LlmGateway:
    def __init__(
        self,
        backend: Backend | None = None,
        cache: ReplayCache | None = None,
        mode: Mode | str = Mode.LIVE,
        retries: int = 3,
        temperature: float = 0.0,
        max_tokens: int = 512,
        retry_delay: float = 0.0,
    ):
        self.backend = backend
        self.cache = cache if cache is not None else ReplayCache()
        self.mode = Mode(mode)
        self.retries = retries
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.retry_delay = retry_delay
        self.network_calls = 0
        self.calls_by_template: Counter[str] = Counter()
        self._lock = threading.Lock()

    def _call_backend(self, request: LlmRequest) -> tuple[str, Mapping[str, int]]:
        if self.backend is None:
            raise ProviderError("no LLM backend configured")
        last: Exception | None = None
        for attempt in range(max(1, self.retries)):
            with self._lock:
                self.network_calls += 1
            try:
                out = self.backend(request)
            except TransportError as exc:
                last = exc
                if self.retry_delay:
                    time.sleep(self.retry_delay * (2 ** attempt))
                continue
            return (out, {}) if isinstance(out, str) else (out[0], dict(out[1]))
        raise ProviderError(f"LLM call failed after {self.retries} attempts: {last}")

    def complete(self, request: LlmRequest) -> LlmResponse:
        fp = request.fingerprint
        with self._lock:
            self.calls_by_template[TemplateId(request.template_id).value] += 1
        if self.mode is not Mode.LIVE:
            cached = self.cache.get(fp)
            if cached is not None:
                return LlmResponse(cached, "replay", fp)
            if self.mode is Mode.REPLAY:
                raise CacheMissError(fp)
        text, usage = self._call_backend(request)
        if self.mode is Mode.RECORD:
            self.cache.put(request, text)
        return LlmResponse(text, "network", fp, usage)

    def request(self, template_id: TemplateId, slots: Mapping[str, str], retry: bool = False) -> LlmRequest:
        prompt = render_prompt(template_id, slots)
        if retry:
            prompt += RETRY_REMINDER
        return LlmRequest(TemplateId(template_id), prompt, self.temperature, self.max_tokens)

    def ask(self, template_id: TemplateId, slots: Mapping[str, str], retry: bool = False) -> LlmResponse:
        return self.complete(self.request(template_id, slots, retry))

    def session(self, tag: str, budget: int | None = None) -> "GatewaySession":
        return GatewaySession(self, tag, budget)


class GatewaySession:
    """A per-agent view of a gateway that logs its own calls and enforces a call budget."""

    def __init__(self, gateway: LlmGateway, tag: str, budget: int | None = None):
        self.gateway = gateway
        self.tag = tag
        self.budget = budget
        self.calls: list[CallRecord] = []

    @property
    def call_count(self) -> int:
        return len(self.calls)

    def ask(self, template_id: TemplateId, slots: Mapping[str, str], retry: bool = False) -> LlmResponse:
        if self.budget is not None and len(self.calls) >= self.budget:
            raise CallBudgetExceeded(f"{self.tag}: call budget of {self.budget} exhausted")
        request = self.gateway.request(template_id, slots, retry)
        response = self.gateway.complete(request)
        self.calls.append(CallRecord(TemplateId(template_id).value, response.fingerprint, response.source))
        return response

    def drain(self) -> list[CallRecord]:
        out, self.calls = self.calls, []
        return out


# --- response parsers ------------------------------------------------------

_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_QUOTES = "\"'`“”‘’"


def parse_keyword_list(text: str) -> list[str]:
    out: list[str] = []
    seen: set[str] = set()
    for part in text.split(","):
        kw = part.strip().strip(_QUOTES).strip()
        if kw and kw.casefold() not in seen:
            seen.add(kw.casefold())
            out.append(kw)
    return out


def parse_score_list(text: str, expected_items: Sequence[str]) -> dict[str, float]:
    """Scores for `expected_items` read from an LLM response.

    Accepts ``name (Score: x)`` mentions, or failing that a positional
    ``Score: a, b, c`` line. Items without a score get 0; scores are clamped
    to [0, 1] and rescaled to sum to 1 when any is positive.
    """
    if not expected_items:
        raise ValueError("expected_items must be non-empty")
    scores: dict[str, float] = {}
    for item in expected_items:
        pat = re.compile(
            r"(?<![\w.])" + re.escape(item) + r"[\s}\"'*]*\(\s*score\s*[:=]\s*(" + _NUM + r")",
            re.IGNORECASE,
        )
        m = pat.search(text)
        if m:
            scores[item] = float(m.group(1))

    if not scores:
        m = re.search(r"(?<!\()\bscores?\s*[:=]\s*(" + _NUM + r"(?:\s*[,;]\s*" + _NUM + r")*)", text, re.IGNORECASE)
        if m:
            values = [float(v) for v in re.findall(_NUM, m.group(1))]
            scores = dict(zip(expected_items, values))

    if not scores:
        raise ScoreParseError("no scores found in response")
    out = {item: min(1.0, max(0.0, scores.get(item, 0.0))) for item in expected_items}
    total = sum(out.values())
    if total > 0:
        out = {k: v / total for k, v in out.items()}
    return out


class TripleParse(NamedTuple):
    triples: list[Triple]
    dropped: int


_BULLET = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s+")


def parse_triple_list(text: str) -> TripleParse:
    """Split each non-empty line into (head, relation, tail) on tabs, else commas."""
    triples, dropped = [], 0
    for line in text.splitlines():
        line = _BULLET.sub("", line).strip()
        if not line:
            continue
        if line[0] in "([" and line[-1] in ")]":
            line = line[1:-1]
        parts = [p.strip() for p in (line.split("\t") if "\t" in line else line.split(","))]
        if len(parts) == 3 and all(parts):
            triples.append(Triple(*parts))
        else:
            dropped += 1
    return TripleParse(triples, dropped)


@dataclass(frozen=True)
class Verdict:
    sufficient: bool
    answer: str | None = None
    rationale: str = ""
    answer_entities: tuple[str, ...] = ()


_BRACED = re.compile(r"\{([^{}]+)\}")
_ANSWER_IS = re.compile(r"answer(?:\s+to\s+the\s+question)?\s+(?:is|would be)\s*:?\s*(.+?)\s*(?:\.(?=\s|$)|\n|$)", re.IGNORECASE)


def extract_answer(text: str, start: int = 0) -> tuple[str, tuple[str, ...]] | None:
    """Answer text and entity list from `text[start:]`, or None.

    Prefers brace groups, then the last ``answer is ...`` phrase.
    """
    tail = text[start:]
    groups = [g.strip() for g in _BRACED.findall(tail) if g.strip() and g.strip().lower() not in ("yes", "no")]
    if groups:
        ents = tuple(dict.fromkeys(groups))
        return ", ".join(ents), ents
    found = _ANSWER_IS.findall(tail)
    if found:
        ans = found[-1].strip().strip(_QUOTES + "{}*").strip()
        if ans:
            return ans, (ans,)
    return None


def parse_sufficiency_verdict(text: str) -> Verdict:
    m = re.search(r"\{\s*(yes|no)\s*\}", text, re.IGNORECASE) or re.search(r"\b(yes|no)\b", text, re.IGNORECASE)
    if not m:
        raise VerdictParseError("response contains neither Yes nor No")
    if m.group(1).lower() == "no":
        return Verdict(False, None, text)
    found = extract_answer(text, m.end())
    if found is None:
        sentences = [s.strip() for s in re.split(r"(?<=[.!?])\s+", text[m.end():].strip(" .\n")) if s.strip()]
        if not sentences:
            raise VerdictParseError("sufficient verdict without an answer")
        answer = sentences[-1].rstrip(".")
        found = (answer, (answer,))
    return Verdict(True, found[0], text, found[1])
