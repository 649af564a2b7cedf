import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from anchorrag.config import PipelineConfig
from anchorrag.entity_index import HashingEmbedder
from anchorrag.kg_store import DEFAULT_SCHEMA_RULES, GraphStore
from anchorrag.llm_gateway import LlmGateway, Mode
from anchorrag.predictor import (
    NO_RELATIONS_SCORE,
    Candidate,
    capitalized_ngrams,
    extract_keywords,
    generate_candidate_entities,
    ground_candidates,
    identify_anchors,
)


def _llm(reply):
    return LlmGateway(lambda req: reply(req) if callable(reply) else reply, mode=Mode.LIVE)


def test_keywords_and_proofread_question():
    kws = extract_keywords("Capital of Nepaal?", _llm("Corrected question: Capital of Nepal?\nNepal"))
    assert kws.keywords == ("Nepal",)
    assert kws.proofread_question == "Capital of Nepal?"
    assert not kws.heuristic


def test_empty_keyword_reply_retries_then_falls_back():
    seen = []
    kws = extract_keywords("Who directed The Wolf of Wall Street?", _llm(lambda r: seen.append(r) or ""))
    assert len(seen) == 2
    assert kws.heuristic
    assert kws.keywords == ("The Wolf", "Wall Street")


def test_capitalized_ngrams_skip_the_leading_question_word():
    assert capitalized_ngrams("Who is Jordan Belfort?") == ["Jordan Belfort"]
    assert capitalized_ngrams("Name the president of Pakistan") == ["Pakistan"]


def test_candidates_respect_the_similarity_floor(toy_index):
    cands = generate_candidate_entities(["Mona Lisa"], toy_index)
    assert cands == []
    cands = generate_candidate_entities(["Eiffel Tower", "Gustave Eiffel"], toy_index, per_keyword_n=3)
    assert [c.entity for c in cands][:2] == ["eiffel_tower", "gustave_eiffel"]
    assert len({c.entity for c in cands}) == len(cands)


def _brute_force_check(triples, cands, question, dim, k, m):
    store = GraphStore.from_triples(triples)
    got = ground_candidates([Candidate(e, "kw", s) for e, s in cands], question, store, HashingEmbedder(dim), k, m)
    scores, top = oracles.grounding_oracle(triples, cands, question, dim, k, m, DEFAULT_SCHEMA_RULES)
    assert [a.entity for a in got] == top
    for a in got:
        want = scores[a.entity]
        assert a.grounding_score == (NO_RELATIONS_SCORE if want is None else pytest.approx(want, abs=1e-9))


@pytest.mark.parametrize("seed", range(10))
def test_grounding_matches_brute_force(seed):
    rng = random.Random(seed)
    ents, names, triples = oracles.random_graph(rng, 80, 15)
    cands = [(e, round(rng.uniform(0.3, 1.0), 3)) for e in rng.sample(ents, 12)]
    question = " ".join(oracles.random_word(rng) for _ in range(6))
    _brute_force_check(triples, cands, question, 32, rng.randint(1, 6), rng.randint(1, 5))


def test_relationless_candidates_only_fill_up():
    triples = [("a", "r.one", "x"), ("b", "type.object.type", "t")]
    cands = [("b", 0.9), ("a", 0.4), ("c", 0.8)]
    store = GraphStore.from_triples(triples + [("c", "sameAs", "c")])
    got = ground_candidates([Candidate(e, "kw", s) for e, s in cands], "q one", store, HashingEmbedder(), 5, 3)
    assert [a.entity for a in got] == ["a", "b", "c"]
    assert [a.grounding_score for a in got[1:]] == [NO_RELATIONS_SCORE, NO_RELATIONS_SCORE]


def test_fewer_than_k_relations_average_what_exists():
    store = GraphStore.from_triples([("a", "r.one", "x"), ("a", "r.two", "y")])
    emb = HashingEmbedder()
    got = ground_candidates([Candidate("a", "kw", 1.0)], "question text", store, emb, k=5, m=1)
    q = emb.embed(["question text"])[0]
    want = np.mean(emb.embed(["r.one", "r.two"]) @ q)
    assert got[0].grounding_score == pytest.approx(want, abs=1e-12)


class ScaledEmbedder(HashingEmbedder):
    """Returns the raw (unnormalised) count vector scaled by a constant."""

    def __init__(self, dim, factor):
        super().__init__(dim)
        self.factor = factor

    def embed(self, texts):
        return np.stack([self._vector(t) * self.factor for t in texts])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100))
def test_question_scale_does_not_change_the_ranking(seed, factor):
    rng = random.Random(seed)
    ents, _, triples = oracles.random_graph(rng, 40, 10)
    store = GraphStore.from_triples(triples)
    cands = [Candidate(e, "kw", 0.5) for e in rng.sample(ents, 8)]
    question = " ".join(oracles.random_word(rng) for _ in range(4))
    base = ground_candidates(cands, question, store, HashingEmbedder(16), 3, 4)
    scaled = ground_candidates(cands, question, store, ScaledEmbedder(16, factor), 3, 4)
    assert [a.entity for a in base] == [a.entity for a in scaled]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_at_most_m_anchors(seed, m):
    rng = random.Random(seed)
    ents, _, triples = oracles.random_graph(rng, 30, 8)
    store = GraphStore.from_triples(triples)
    cands = [Candidate(e, "kw", 0.5) for e in rng.sample(ents, rng.randint(0, 10))]
    got = ground_candidates(cands, "some question", store, HashingEmbedder(16), 3, m)
    assert len(got) == min(m, len(cands))


def test_identify_anchors_uses_the_proofread_question(toy_store, toy_index):
    prompts = []

    def reply(req):
        prompts.append(req.prompt)
        return "Corrected question: What is the capital of Nepal?\nNepal"

    config = PipelineConfig(mode=Mode.LIVE)
    anchors, trace = identify_anchors("What is the capital of Nepaal?", _llm(reply).session("p"), toy_store, toy_index, config)
    assert trace.anchors[0] == "nepal"
    assert trace.proofread_question == "What is the capital of Nepal?"
    assert len(anchors) <= config.num_agents


def test_identify_anchors_is_deterministic(toy_store, toy_index):
    config = PipelineConfig(mode=Mode.LIVE)
    runs = [identify_anchors("Who designed the Eiffel Tower?", _llm("Eiffel Tower, Paris"), toy_store, toy_index, config)[0] for _ in range(2)]
    assert runs[0] == runs[1]
