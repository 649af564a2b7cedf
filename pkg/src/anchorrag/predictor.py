"""Predictor agent: find anchor entities for a question.

Keywords come from the LLM, candidate entities from the name index, and
candidates are re-ranked by how well their neighbouring relations match
the question: the score of an entity is the mean inner product between
the question embedding and its ``k`` best-matching relation embeddings.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .entity_index import SCORE_DECIMALS, EmbeddingProvider, EntityIndex, embed_many, embed_text, search_entities
from .kg_store import DEFAULT_SCHEMA_RULES, EntityId, KnowledgeGraph, Relation, is_schema_relation
from .llm_gateway import TemplateId, parse_keyword_list

NO_RELATIONS_SCORE = -1.0

_CORRECTED = re.compile(r"^\s*corrected question\s*:\s*(.*)$", re.IGNORECASE)
_LEAD_LABEL = re.compile(r"^\s*(?:topic entities|entities|keywords)\s*:\s*", re.IGNORECASE)
_LEADING_STOPWORDS = {
    "what", "who", "whom", "whose", "which", "where", "when", "why", "how", "name",
    "the", "a", "an", "in", "on", "is", "are", "was", "were", "did", "do", "does", "of",
}


@dataclass(frozen=True)
class KeywordSet:
    keywords: tuple[str, ...]
    proofread_question: str | None = None
    heuristic: bool = False


@dataclass(frozen=True)
class Candidate:
    entity: EntityId
    keyword: str
    similarity: float


@dataclass(frozen=True)
class CandidateAnchor:
    entity: EntityId
    grounding_score: float
    matched_keyword: str
    similarity: float
    top_relations: tuple[tuple[Relation, float], ...] = ()


@dataclass
class PredictorTrace:
    question: str
    proofread_question: str | None = None
    keywords: list[str] = field(default_factory=list)
    heuristic_keywords: bool = False
    candidates: list[Candidate] = field(default_factory=list)
    grounded: list[CandidateAnchor] = field(default_factory=list)
    anchors: list[EntityId] = field(default_factory=list)
    calls: list = field(default_factory=list)


def _split_keyword_response(text: str) -> tuple[str | None, list[str]]:
    corrected = None
    rest = []
    for line in text.splitlines():
        m = _CORRECTED.match(line)
        if m:
            corrected = m.group(1).strip() or None
        elif line.strip():
            rest.append(_LEAD_LABEL.sub("", line))
    return corrected, parse_keyword_list(",".join(rest))


def capitalized_ngrams(question: str) -> list[str]:
    """Maximal runs of capitalised tokens, e.g. ``"Who is Jordan Belfort?"`` -> ``["Jordan Belfort"]``."""
    tokens = re.findall(r"[\w'’-]+", question)
    runs, cur = [], []
    for i, tok in enumerate(tokens):
        if tok[:1].isupper() and not (i == 0 and tok.lower() in _LEADING_STOPWORDS):
            cur.append(tok)
        else:
            if cur:
                runs.append(" ".join(cur))
            cur = []
    if cur:
        runs.append(" ".join(cur))
    return list(dict.fromkeys(runs))


def extract_keywords(question: str, llm) -> KeywordSet:
    if not question.strip():
        raise ValueError("empty question")
    corrected = None
    for retry in (False, True):
        corrected_now, keywords = _split_keyword_response(llm.ask(TemplateId.KEYWORD_EXTRACTION, {"Question": question}, retry=retry).text)
        corrected = corrected or corrected_now
        if keywords:
            return KeywordSet(tuple(keywords), corrected)
    return KeywordSet(tuple(capitalized_ngrams(corrected or question)), corrected, heuristic=True)


def _rank_key(score: float, *rest):
    return (-round(score, SCORE_DECIMALS), *rest)


def generate_candidate_entities(
    keywords: Sequence[str],
    index: EntityIndex,
    per_keyword_n: int = 10,
    similarity_floor: float = 0.3,
) -> list[Candidate]:
    """Union of the top hits per keyword, one entry per entity at its best similarity."""
    if per_keyword_n < 1:
        raise ValueError("per_keyword_n must be >= 1")
    best: dict[EntityId, Candidate] = {}
    for kw in keywords:
        for hit in search_entities(index, kw, per_keyword_n):
            if hit.score < similarity_floor:
                continue
            prev = best.get(hit.entity)
            if prev is None or round(hit.score, SCORE_DECIMALS) > round(prev.similarity, SCORE_DECIMALS):
                best[hit.entity] = Candidate(hit.entity, kw, hit.score)
    return sorted(best.values(), key=lambda c: _rank_key(c.similarity, c.entity))


def relation_text(relation: Relation, humanize: bool = False) -> str:
    return relation.replace(".", " ").replace("_", " ") if humanize else relation


def ground_candidates(
    candidates: Sequence[Candidate],
    question: str,
    store: KnowledgeGraph,
    provider: EmbeddingProvider,
    k: int = 5,
    m: int = 3,
    schema_rules: Sequence[str] = DEFAULT_SCHEMA_RULES,
    humanize_relations: bool = False,
) -> list[CandidateAnchor]:
    """Score every candidate by its relation neighbourhood and keep the best `m`.

    A candidate with fewer than `k` usable relations is averaged over the
    ones it has. Candidates without any non-schema relation get score -1 and
    are only used to fill up when fewer than `m` others exist.
    """
    if k < 1 or m < 1:
        raise ValueError("k and m must be >= 1")
    rel_sets = {
        c.entity: sorted({e.relation for e in store.relations_of(c.entity) if not is_schema_relation(e.relation, schema_rules)})
        for c in candidates
    }
    vocab = sorted({r for rels in rel_sets.values() for r in rels})
    q = embed_text(provider, question)
    rel_score = {}
    if vocab:
        sims = embed_many(provider, [relation_text(r, humanize_relations) for r in vocab]) @ q
        rel_score = dict(zip(vocab, sims.tolist()))

    scored, empty = [], []
    for c in candidates:
        rels = rel_sets[c.entity]
        if not rels:
            empty.append(CandidateAnchor(c.entity, NO_RELATIONS_SCORE, c.keyword, c.similarity))
            continue
        top = sorted(((r, rel_score[r]) for r in rels), key=lambda rs: _rank_key(rs[1], rs[0]))[:k]
        score = float(np.mean([s for _, s in top]))
        scored.append(CandidateAnchor(c.entity, score, c.keyword, c.similarity, tuple(top)))

    scored.sort(key=lambda a: _rank_key(a.grounding_score, -round(a.similarity, SCORE_DECIMALS), a.entity))
    empty.sort(key=lambda a: _rank_key(a.similarity, a.entity))
    return (scored + empty)[:m]


def identify_anchors(
    question: str,
    llm,
    store: KnowledgeGraph,
    index: EntityIndex,
    config,
) -> tuple[list[CandidateAnchor], PredictorTrace]:
    trace = PredictorTrace(question)
    kws = extract_keywords(question, llm)
    trace.proofread_question = kws.proofread_question
    trace.keywords = list(kws.keywords)
    trace.heuristic_keywords = kws.heuristic

    trace.candidates = generate_candidate_entities(kws.keywords, index, config.per_keyword_n, config.similarity_floor)
    if not trace.candidates:
        return [], trace
    anchors = ground_candidates(
        trace.candidates,
        kws.proofread_question or question,
        store,
        index.provider,
        config.top_k_relations,
        config.num_agents,
        config.schema_rules,
        config.embedding.humanize_relations,
    )
    trace.grounded = anchors
    trace.anchors = [a.entity for a in anchors]
    return anchors, trace
