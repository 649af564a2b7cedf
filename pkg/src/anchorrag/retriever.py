"""Retriever agent: one-hop expansion with LLM-scored pruning and filtering.

Each round an agent, for every entity on its frontier,

1. scores the unvisited non-schema relations and keeps the best ``b``;
2. for each kept relation, scores the neighbouring entities and keeps the
   best ``b``, giving candidate triples;
3. asks the LLM which candidate triples matter for the question.

Surviving triples extend the agent's knowledge paths and their far ends
become the next frontier. No surviving triples deactivates the agent.

Relations are offered to the LLM by name. A name present in both
directions around an entity is one candidate, and its neighbours are
gathered from both directions.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Sequence

from .entity_index import SCORE_DECIMALS
from .kg_store import DEFAULT_SCHEMA_RULES, Direction, EntityId, KnowledgeGraph, Relation, RelationEdge, Triple, is_schema_relation
from .llm_gateway import CallBudgetExceeded, ScoreParseError, TemplateId, parse_score_list, parse_triple_list


class RetrieverError(RuntimeError):
    def __init__(self, agent_id: int, cause: Exception):
        super().__init__(f"agent {agent_id}: {cause}")
        self.agent_id = agent_id


@dataclass(frozen=True)
class PathStep:
    """A triple walked from `source` to `target`; OUTGOING means head to tail."""

    triple: Triple
    direction: Direction

    @property
    def source(self) -> EntityId:
        return self.triple.head if self.direction is Direction.OUTGOING else self.triple.tail

    @property
    def target(self) -> EntityId:
        return self.triple.tail if self.direction is Direction.OUTGOING else self.triple.head


@dataclass(frozen=True)
class KnowledgePath:
    anchor: EntityId
    steps: tuple[PathStep, ...] = ()

    @property
    def end(self) -> EntityId:
        return self.steps[-1].target if self.steps else self.anchor

    def extend(self, step: PathStep) -> "KnowledgePath":
        if step.source != self.end:
            raise ValueError(f"step from {step.source} does not continue a path ending at {self.end}")
        return KnowledgePath(self.anchor, self.steps + (step,))


@dataclass(frozen=True)
class ScoredRelation:
    source_entity: EntityId
    relation: Relation
    score: float
    directions: tuple[Direction, ...]

    @property
    def edges(self) -> list[RelationEdge]:
        return [RelationEdge(self.relation, d) for d in self.directions]


@dataclass
class RetrieverState:
    agent_id: int
    anchor: EntityId
    frontier: list[EntityId] = field(default_factory=list)
    visited: set[tuple[EntityId, Relation, Direction]] = field(default_factory=set)
    depth: int = 0
    paths: list[KnowledgePath] = field(default_factory=list)
    walked: set[Triple] = field(default_factory=set)
    active: bool = True
    stop_reason: str | None = None

    def __post_init__(self):
        if not self.frontier:
            self.frontier = [self.anchor]


@dataclass
class EntitySelection:
    source_entity: EntityId
    relation: Relation
    scores: dict[EntityId, float]
    selected: list[PathStep]
    fallback: bool = False


@dataclass
class ExplorationStep:
    agent_id: int
    depth: int
    frontier: list[EntityId]
    relations: list[ScoredRelation] = field(default_factory=list)
    relation_fallbacks: list[EntityId] = field(default_factory=list)
    entities: list[EntitySelection] = field(default_factory=list)
    candidates: list[PathStep] = field(default_factory=list)
    filtered: list[PathStep] = field(default_factory=list)
    deactivated: bool = False
    reason: str | None = None
    calls: list = field(default_factory=list)


def _score_items(llm, template: TemplateId, slots: dict, items: Sequence[str]) -> tuple[dict[str, float], bool]:
    """LLM scores for `items`; one reminder retry, then uniform. Returns (scores, used_fallback)."""
    for retry in (False, True):
        try:
            return parse_score_list(llm.ask(template, slots, retry=retry).text, items), False
        except ScoreParseError:
            continue
    return {it: 1.0 / len(items) for it in items}, True


def _top(scored: dict, b: int) -> list:
    positive = [(k, v) for k, v in scored.items() if v > 0]
    positive.sort(key=lambda kv: (-round(kv[1], SCORE_DECIMALS), kv[0]))
    return positive[:b]


def prune_relations(
    state: RetrieverState,
    question: str,
    store: KnowledgeGraph,
    llm,
    b: int,
    schema_rules: Sequence[str] = DEFAULT_SCHEMA_RULES,
    step: ExplorationStep | None = None,
) -> list[ScoredRelation]:
    """Top-`b` relation names per frontier entity, marked visited once chosen."""
    if b < 1:
        raise ValueError("b must be >= 1")
    out: list[ScoredRelation] = []
    for entity in state.frontier:
        dirs: dict[Relation, list[Direction]] = {}
        for edge in store.relations_of(entity):
            if is_schema_relation(edge.relation, schema_rules):
                continue
            if (entity, edge.relation, edge.direction) in state.visited:
                continue
            dirs.setdefault(edge.relation, []).append(edge.direction)
        names = sorted(dirs)
        if not names:
            continue
        if len(names) == 1:
            scores, fallback = {names[0]: 1.0}, False
        else:
            slots = {"Width": str(b), "Question": question, "Topic Entity": store.label(entity), "Relations": "; ".join(names)}
            scores, fallback = _score_items(llm, TemplateId.RELATION_PRUNING, slots, names)
        if fallback and step is not None:
            step.relation_fallbacks.append(entity)
        for name, score in _top(scores, b):
            out.append(ScoredRelation(entity, name, score, tuple(dirs[name])))
            state.visited.update((entity, name, d) for d in dirs[name])
    return out


def _entity_names(store: KnowledgeGraph, ids: Sequence[EntityId]) -> list[str]:
    labels = [store.label(e) for e in ids]
    seen: dict[str, int] = {}
    for lab in labels:
        seen[lab] = seen.get(lab, 0) + 1
    return [f"{lab} [{eid}]" if seen[lab] > 1 else lab for lab, eid in zip(labels, ids)]


def prune_entities(
    state: RetrieverState,
    relation: ScoredRelation,
    question: str,
    store: KnowledgeGraph,
    llm,
    b: int,
    cap: int = 50,
) -> EntitySelection:
    """Top-`b` neighbours reached over `relation`, as oriented path steps.

    Triples the agent has already walked are not offered again, so a path
    never doubles back over its own last step.
    """
    src = relation.source_entity

    def oriented(n: EntityId, d: Direction) -> Triple:
        return Triple(src, relation.relation, n) if d is Direction.OUTGOING else Triple(n, relation.relation, src)

    via: dict[EntityId, Direction] = {}
    for edge in relation.edges:
        for n in store.neighbors_via(src, edge):
            if oriented(n, edge.direction) not in state.walked:
                via.setdefault(n, edge.direction)
    ids = sorted(via)[:cap]

    def step_to(n: EntityId) -> PathStep:
        return PathStep(oriented(n, via[n]), via[n])

    if not ids:
        return EntitySelection(src, relation.relation, {}, [])
    if len(ids) == 1:
        return EntitySelection(src, relation.relation, {ids[0]: 1.0}, [step_to(ids[0])])

    names = _entity_names(store, ids)
    slots = {"Question": question, "Relation": relation.relation, "Entities": "; ".join(names)}
    by_name, fallback = _score_items(llm, TemplateId.ENTITY_PRUNING, slots, names)
    scores = {eid: by_name[name] for eid, name in zip(ids, names)}
    chosen = [eid for eid, _ in _top(scores, b)]
    return EntitySelection(src, relation.relation, scores, [step_to(e) for e in chosen], fallback)


def render_triple(store: KnowledgeGraph, triple: Triple) -> str:
    return f"{store.label(triple.head)}, {triple.relation}, {store.label(triple.tail)}"


def _norm(s: str) -> str:
    return " ".join(s.casefold().split())


def filter_triples(candidates: Sequence[PathStep], question: str, store: KnowledgeGraph, llm) -> list[PathStep]:
    """Candidates the LLM echoes back; anything it invents is ignored."""
    if not candidates:
        return []
    lines = [render_triple(store, c.triple) for c in candidates]
    text = llm.ask(TemplateId.TRIPLE_FILTERING, {"Question": question, "Triples": "\n".join(lines)}).text
    echoed = {_norm(re.sub(r"^\s*(?:[-*•]|\d+[.)])\s+", "", ln)) for ln in text.splitlines() if ln.strip()}
    parsed = {tuple(_norm(x) for x in t) for t in parse_triple_list(text).triples}
    kept = []
    for c, line in zip(candidates, lines):
        key = (_norm(store.label(c.triple.head)), _norm(c.triple.relation), _norm(store.label(c.triple.tail)))
        if _norm(line) in echoed or key in parsed:
            kept.append(c)
    return kept


def _extend_paths(state: RetrieverState, filtered: Sequence[PathStep]) -> list[KnowledgePath]:
    out, used = [], set()
    for path in state.paths:
        exts = [path.extend(s) for s in filtered if s.source == path.end]
        used.update(s for s in filtered if s.source == path.end)
        out.extend(exts or [path])
    out.extend(KnowledgePath(state.anchor, (s,)) for s in filtered if s not in used)
    return out


def retrieve_step(state: RetrieverState, question: str, store: KnowledgeGraph, llm, config) -> ExplorationStep:
    """Advance `state` by one hop. `llm` should be this agent's own gateway session."""
    if not state.active:
        raise RuntimeError(f"agent {state.agent_id} is inactive")
    if state.depth >= config.max_depth:
        raise RuntimeError(f"agent {state.agent_id} already at maximum depth")
    step = ExplorationStep(state.agent_id, state.depth + 1, list(state.frontier))
    try:
        step.relations = prune_relations(state, question, store, llm, config.width, config.schema_rules, step)
        for rel in step.relations:
            sel = prune_entities(state, rel, question, store, llm, config.width, config.entity_cap)
            step.entities.append(sel)
            step.candidates.extend(sel.selected)
        step.filtered = filter_triples(step.candidates, question, store, llm)
    except CallBudgetExceeded:
        step.filtered = []
        step.reason = "call budget exhausted"
    except Exception as exc:
        raise RetrieverError(state.agent_id, exc) from exc

    state.depth += 1
    if step.filtered:
        state.paths = _extend_paths(state, step.filtered)
        state.walked.update(s.triple for s in step.filtered)
        state.frontier = sorted({s.target for s in step.filtered})
    else:
        state.active = False
        step.deactivated = True
        if step.reason is None:
            step.reason = "no relations left" if not step.relations else "no triples kept after filtering"
        state.stop_reason = step.reason
    if hasattr(llm, "drain"):
        step.calls = llm.drain()
    return step
