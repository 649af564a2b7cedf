import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anchorrag.config import PipelineConfig
from anchorrag.kg_store import Direction, GraphStore, Triple
from anchorrag.llm_gateway import LlmGateway, Mode, TemplateId
from anchorrag.retriever import (
    KnowledgePath,
    PathStep,
    RetrieverState,
    filter_triples,
    prune_entities,
    prune_relations,
    retrieve_step,
)


class Replies:
    """Backend answering by template, recording each prompt."""

    def __init__(self, **by_template):
        self.by_template = by_template
        self.prompts = []

    def __call__(self, req):
        self.prompts.append((req.template_id, req.prompt))
        reply = self.by_template[TemplateId(req.template_id).value]
        return reply(req.prompt) if callable(reply) else reply


def _session(backend, budget=None):
    return LlmGateway(backend, mode=Mode.LIVE).session("agent-0", budget)


CFG = PipelineConfig(mode=Mode.LIVE)


def test_brahui_relations_are_ranked_by_score(toy_store):
    backend = Replies(relation_pruning=(
        "{language.human_language.main_country (Score: 0.5)}\n"
        "{language.human_language.countries_spoken_in (Score: 0.3)}\n"
        "{base.rosetta.languoid.parent (Score: 0.2)}"
    ))
    state = RetrieverState(0, "brahui_language")
    got = prune_relations(state, "Who led Pakistan?", toy_store, _session(backend), b=2)
    assert [r.relation for r in got] == ["language.human_language.main_country", "language.human_language.countries_spoken_in"]
    assert ("brahui_language", "language.human_language.main_country", Direction.OUTGOING) in state.visited
    assert ("brahui_language", "base.rosetta.languoid.parent", Direction.OUTGOING) not in state.visited


def test_schema_relations_are_never_offered(toy_store):
    backend = Replies(relation_pruning=lambda p: "Score: 1")
    prune_relations(RetrieverState(0, "france"), "q", toy_store, _session(backend), b=3)
    assert "type.object.type" not in backend.prompts[0][1]


def test_visited_relations_are_not_scored_again(toy_store):
    backend = Replies(relation_pruning="{location.country.capital (Score: 1.0)}")
    state = RetrieverState(0, "france")
    prune_relations(state, "q", toy_store, _session(backend), b=1)
    prune_relations(state, "q", toy_store, _session(backend), b=1)
    second = backend.prompts[1][1].rsplit("Relations: \n", 1)[1]
    assert "location.country.capital" not in second.split("; ")


def test_unparseable_scores_retry_then_fall_back_to_uniform(toy_store):
    backend = Replies(relation_pruning="no idea")
    step_holder = type("S", (), {"relation_fallbacks": []})()
    got = prune_relations(RetrieverState(0, "france"), "q", toy_store, _session(backend), b=3, step=step_holder)
    assert len(backend.prompts) == 2
    assert step_holder.relation_fallbacks == ["france"]
    assert [r.relation for r in got] == sorted(r.relation for r in got)


def test_so_undercover_is_the_only_entity_kept(toy_store):
    backend = Replies(entity_pruning=lambda p: "Score: " + ", ".join(
        "1.0" if name == "So Undercover" else "0.0" for name in p.rsplit("Entities: \n", 1)[1].split("; ")))
    state = RetrieverState(0, "tobin_armbrust")
    rel = prune_relations(state, "q", toy_store, _session(Replies()), b=3)[0]
    sel = prune_entities(state, rel, "q", toy_store, _session(backend), b=3)
    assert [s.triple for s in sel.selected] == [Triple("tobin_armbrust", "film.producer.film", "so_undercover")]


def test_single_neighbour_needs_no_call(toy_store):
    backend = Replies()
    state = RetrieverState(0, "france")
    rel = next(r for r in prune_relations(state, "q", toy_store, _session(Replies(relation_pruning="{location.country.capital (Score: 1)}")), b=1))
    sel = prune_entities(state, rel, "q", toy_store, _session(backend), b=3)
    assert backend.prompts == []
    assert sel.selected == [PathStep(Triple("france", "location.country.capital", "paris"), Direction.OUTGOING)]


def test_incoming_steps_walk_backwards():
    step = PathStep(Triple("france", "location.country.capital", "paris"), Direction.INCOMING)
    assert (step.source, step.target) == ("paris", "france")
    path = KnowledgePath("paris").extend(step)
    assert path.end == "france"
    with pytest.raises(ValueError):
        path.extend(step)


def test_filter_keeps_only_echoed_candidates(toy_store):
    cands = [
        PathStep(Triple("france", "location.country.capital", "paris"), Direction.OUTGOING),
        PathStep(Triple("france", "location.country.borders", "spain"), Direction.OUTGOING),
    ]
    backend = Replies(triple_filtering="1. France, location.country.capital, Paris\nAtlantis, r.x, Nowhere")
    assert filter_triples(cands, "q", toy_store, _session(backend)) == cands[:1]
    assert filter_triples([], "q", toy_store, _session(backend)) == []
    assert len(backend.prompts) == 1


@settings(max_examples=50, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=8), st.booleans())
def test_filter_output_is_a_subset(keep, invent):
    triples = [Triple(f"e{i}", "r.x", f"e{i + 1}") for i in range(len(keep))]
    store = GraphStore.from_triples(triples)
    cands = [PathStep(t, Direction.OUTGOING) for t in triples]
    lines = [f"{t.head}, r.x, {t.tail}" for t, k in zip(triples, keep) if k]
    if invent:
        lines.append("e99, r.x, e100")
    out = filter_triples(cands, "q", store, _session(Replies(triple_filtering="\n".join(lines))))
    assert out == [c for c, k in zip(cands, keep) if k]


def test_empty_filter_deactivates_and_silences_the_agent(toy_store):
    backend = Replies(relation_pruning="{location.country.capital (Score: 1)}", triple_filtering="")
    session = _session(backend)
    state = RetrieverState(0, "france")
    step = retrieve_step(state, "q", toy_store, session, CFG)
    assert step.deactivated and not state.active
    assert step.reason == "no triples kept after filtering"
    with pytest.raises(RuntimeError):
        retrieve_step(state, "q", toy_store, session, CFG)
    assert len(backend.prompts) == len(step.calls)


def test_two_hop_walk_reaches_dijon(toy_store):
    wanted = {"architecture.structure.architect", "people.person.place_of_birth"}

    def rel_scores(p):
        names = p.rsplit("Relations: \n", 1)[1].split("; ")
        return "\n".join(f"{{{n} (Score: {1.0 if n in wanted else 0.0})}}" for n in names)

    def keep(p):
        lines = p.rsplit("Triples: \n", 1)[1].splitlines()
        return "\n".join(ln for ln in lines if ln.split(", ")[1] in wanted)

    backend = Replies(relation_pruning=rel_scores, entity_pruning="Score: 1", triple_filtering=keep)
    state = RetrieverState(0, "eiffel_tower")
    for _ in range(2):
        retrieve_step(state, "q", toy_store, _session(backend), CFG)
    assert state.depth == 2
    assert [[s.triple for s in p.steps] for p in state.paths] == [[
        Triple("eiffel_tower", "architecture.structure.architect", "gustave_eiffel"),
        Triple("gustave_eiffel", "people.person.place_of_birth", "dijon"),
    ]]
    assert state.frontier == ["dijon"]


def test_call_budget_stops_the_agent(toy_store):
    backend = Replies(relation_pruning="{location.country.capital (Score: 1)}", triple_filtering="")
    state = RetrieverState(0, "france")
    step = retrieve_step(state, "q", toy_store, _session(backend, budget=0), CFG)
    assert step.reason == "call budget exhausted"
    assert not state.active and backend.prompts == []
