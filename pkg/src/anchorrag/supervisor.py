"""Supervisor agent and the end-to-end question-answering loop."""
from __future__ import annotations

import dataclasses
import enum
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

from .config import PipelineConfig
from .entity_index import EntityIndex
from .kg_store import KnowledgeGraph, Triple
from .llm_gateway import (
    CallRecord,
    LlmGateway,
    TemplateId,
    Verdict,
    VerdictParseError,
    extract_answer,
    parse_sufficiency_verdict,
)
from .predictor import PredictorTrace, identify_anchors
from .retriever import ExplorationStep, KnowledgePath, RetrieverState, render_triple, retrieve_step

log = logging.getLogger(__name__)


class Provenance(str, enum.Enum):
    RETRIEVED = "retrieved"
    COT_FALLBACK = "cot_fallback"


@dataclass
class Answer:
    text: str
    answer_entities: list[str]
    provenance: Provenance
    supporting_paths: list[KnowledgePath] = field(default_factory=list)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class RoundRecord:
    round: int
    steps: list[ExplorationStep] = field(default_factory=list)
    verdict: Verdict | None = None
    verdict_skipped: bool = False
    verdict_parse_failed: bool = False
    calls: list[CallRecord] = field(default_factory=list)


@dataclass
class AnswerTrace:
    question: str
    proofread_question: str | None = None
    predictor: PredictorTrace | None = None
    rounds: list[RoundRecord] = field(default_factory=list)
    answer: Answer | None = None
    termination: str = ""
    final_calls: list[CallRecord] = field(default_factory=list)
    elapsed_seconds: float = 0.0

    @property
    def num_rounds(self) -> int:
        return len(self.rounds)

    def all_calls(self) -> list[CallRecord]:
        calls = list(self.predictor.calls) if self.predictor else []
        for rnd in self.rounds:
            for st in rnd.steps:
                calls.extend(st.calls)
            calls.extend(rnd.calls)
        return calls + list(self.final_calls)

    def to_dict(self, include_timing: bool = False) -> dict[str, Any]:
        out = _plain(self)
        out["num_rounds"] = self.num_rounds
        if not include_timing:
            out.pop("elapsed_seconds")
        return out

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), sort_keys=True, indent=2, ensure_ascii=False)


def _plain(obj):
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, CallRecord):
        return obj._asdict()
    if isinstance(obj, Triple):
        return list(obj)
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(_plain(k)): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (set, frozenset)):
        return sorted((_plain(v) for v in obj), key=repr)
    return obj


def pooled_triples(paths: Sequence[KnowledgePath]) -> list[Triple]:
    """Distinct triples over `paths`, in first-seen order."""
    return list(dict.fromkeys(s.triple for p in paths for s in p.steps))


def evaluate_sufficiency(question: str, paths: Sequence[KnowledgePath], store: KnowledgeGraph, llm) -> tuple[Verdict, bool]:
    """Ask whether the pooled evidence answers `question`.

    Returns the verdict and whether parsing failed (an unparseable reply,
    after one retry, counts as insufficient). With no evidence, no call is
    made.
    """
    triples = pooled_triples(paths)
    if not triples:
        return Verdict(False, None, ""), False
    slots = {"Question": question, "Triples": "\n".join(render_triple(store, t) for t in triples)}
    text = ""
    for retry in (False, True):
        text = llm.ask(TemplateId.SUFFICIENCY_EVALUATION, slots, retry=retry).text
        try:
            return parse_sufficiency_verdict(text), False
        except VerdictParseError:
            continue
    return Verdict(False, None, text), True


def cot_fallback(question: str, llm) -> Answer:
    try:
        text = llm.ask(TemplateId.COT_FALLBACK, {"Question": question}).text
    except Exception as exc:  # any gateway failure becomes an error answer
        return Answer("", [], Provenance.COT_FALLBACK, error=f"{type(exc).__name__}: {exc}")
    found = extract_answer(text)
    if found is None:
        stripped = text.strip()
        return Answer(stripped, [stripped] if stripped else [], Provenance.COT_FALLBACK)
    return Answer(found[0], list(found[1]), Provenance.COT_FALLBACK)


def answer_question(
    question: str,
    store: KnowledgeGraph,
    index: EntityIndex,
    gateway: LlmGateway,
    config: PipelineConfig | None = None,
) -> AnswerTrace:
    config = config or PipelineConfig()
    started = time.monotonic()
    deadline = started + config.effective_timeout if config.effective_timeout else None
    trace = AnswerTrace(question)

    predictor_llm = gateway.session("predictor")
    anchors, trace.predictor = identify_anchors(question, predictor_llm, store, index, config)
    trace.predictor.calls = predictor_llm.drain()
    trace.proofread_question = trace.predictor.proofread_question
    q = trace.proofread_question or question

    agents = [RetrieverState(i, a.entity) for i, a in enumerate(anchors[: config.num_agents])]
    sessions = [gateway.session(f"agent-{i}", config.agent_call_budget) for i in range(len(agents))]
    supervisor_llm = gateway.session("supervisor")

    if not agents:
        trace.termination = "no anchors"
    pool = ThreadPoolExecutor(max_workers=max(1, len(agents))) if agents else None
    try:
        for rnd in range(1, config.max_depth + 1):
            active = [a for a in agents if a.active]
            if not active:
                break
            if deadline is not None and time.monotonic() > deadline:
                trace.termination = "timeout"
                break
            futures = [pool.submit(retrieve_step, a, q, store, sessions[a.agent_id], config) for a in active]
            # results merged in agent-id order regardless of completion order
            record = RoundRecord(rnd, [f.result() for f in futures])
            trace.rounds.append(record)

            if not any(st.filtered for st in record.steps):
                # no new evidence this round; the last verdict already covered the rest
                record.verdict_skipped = True
            else:
                paths = [p for a in agents for p in a.paths]
                record.verdict, record.verdict_parse_failed = evaluate_sufficiency(q, paths, store, supervisor_llm)
                record.calls = supervisor_llm.drain()
                if record.verdict.sufficient:
                    support = [p for p in paths if p.steps]
                    trace.answer = Answer(
                        record.verdict.answer or "",
                        list(record.verdict.answer_entities) or [record.verdict.answer or ""],
                        Provenance.RETRIEVED,
                        support,
                    )
                    trace.termination = "sufficient"
                    break
    finally:
        if pool is not None:
            pool.shutdown(wait=True)

    if trace.answer is None:
        if not trace.termination:
            trace.termination = "no active agents" if not any(a.active for a in agents) else "max depth"
        trace.answer = cot_fallback(q, supervisor_llm)
        trace.final_calls = supervisor_llm.drain()
    trace.elapsed_seconds = time.monotonic() - started
    return trace
