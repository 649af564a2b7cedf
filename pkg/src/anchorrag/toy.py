"""A small bundled knowledge graph and a scripted LLM for offline runs.

:class:`ScriptedLLM` is a backend that plays the LLM's part for the
questions in :data:`TOY_QUESTIONS`. It favours exactly the triples each
script marks as relevant, so a pipeline run against it is fully
determined and can be recorded into a replay cache.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .config import EmbeddingSettings, PipelineConfig
from .evalkit import QAItem
from .kg_store import GraphStore, load_graph
from .llm_gateway import LlmRequest, Mode, TemplateId, parse_triple_list

# 64 hashed dimensions blur the toy entity names into each other; 512 keeps them apart
TOY_DIMENSION = 512


def data_path(name: str) -> Path:
    return Path(str(resources.files("anchorrag").joinpath("data", name)))


def load_toy_graph() -> GraphStore:
    return load_graph(data_path("toy_kg.tsv"), data_path("toy_labels.tsv"))


def toy_config(mode: Mode | str = Mode.REPLAY, **overrides) -> PipelineConfig:
    return PipelineConfig(mode=mode, embedding=EmbeddingSettings(dimension=TOY_DIMENSION), **overrides)


@dataclass(frozen=True)
class ToyQuestion:
    id: str
    question: str
    keywords: tuple[str, ...]
    answer: str
    relevant: tuple[tuple[str, str, str], ...] = ()
    evidence: tuple[tuple[str, str, str], ...] | None = None
    cot_answer: str | None = None
    corrected: str | None = None
    filtering: str = "gold"  # "gold" or "empty"
    verdicts: str = "gold"  # "gold" or "never"
    hops: int = 1
    expect: str = "retrieved"

    @property
    def needed(self) -> tuple[tuple[str, str, str], ...]:
        return self.relevant if self.evidence is None else self.evidence


TOY_QUESTIONS: tuple[ToyQuestion, ...] = (
    ToyQuestion(
        "toy-01", "What is the capital of France?", ("France",), "Paris",
        relevant=(("france", "location.country.capital", "paris"),),
    ),
    ToyQuestion(
        "toy-02", "Who directed The Wolf of Wall Street?", ("The Wolf of Wall Street",), "Martin Scorsese",
        relevant=(("the_wolf_of_wall_street", "film.film.directed_by", "martin_scorsese"),),
    ),
    ToyQuestion(
        "toy-03", "The movie featured Miley Cyrus and was produced by Tobin Armbrust?",
        ("Miley Cyrus", "Tobin Armbrust"), "So Undercover",
        relevant=(
            ("tobin_armbrust", "film.producer.film", "so_undercover"),
            ("so_undercover", "film.film.starring", "miley_cyrus"),
        ),
        evidence=(("tobin_armbrust", "film.producer.film", "so_undercover"),),
    ),
    ToyQuestion(
        "toy-04", "Who inspired F. Scott Fitzgerald, and who was the architect that designed The Mount?",
        ("F. Scott Fitzgerald", "The Mount"), "Edith Wharton",
        relevant=(
            ("edith_wharton", "influence.influence_node.influenced", "f_scott_fitzgerald"),
            ("the_mount", "architecture.structure.architect", "edith_wharton"),
        ),
    ),
    ToyQuestion(
        "toy-05", "Where was the architect of the Eiffel Tower born?", ("Eiffel Tower",), "Dijon",
        relevant=(
            ("eiffel_tower", "architecture.structure.architect", "gustave_eiffel"),
            ("gustave_eiffel", "people.person.place_of_birth", "dijon"),
        ),
        hops=2,
    ),
    ToyQuestion(
        "toy-06", "Name the president of the country whose main spoken language was Brahui in 1980?",
        ("Brahui",), "Muhammad Zia-ul-Haq",
        relevant=(
            ("brahui_language", "language.human_language.main_country", "pakistan"),
            ("pakistan", "government.governmental_jurisdiction.head_of_state", "muhammad_zia_ul_haq"),
        ),
        hops=2,
    ),
    ToyQuestion(
        "toy-07", "What country bordering France contains an airport that serves Nijmegen?",
        ("France", "Nijmegen"), "Germany",
        relevant=(
            ("france", "location.country.borders", "germany"),
            ("weeze_airport", "aviation.airport.serves", "nijmegen"),
            ("weeze_airport", "location.location.containedby", "germany"),
        ),
        hops=2,
    ),
    ToyQuestion(
        "toy-08", "The artist nominated for The Long Winter lived where?", ("The Long Winter",), "De Smet",
        relevant=(
            ("the_long_winter", "book.written_work.author", "laura_ingalls_wilder"),
            ("laura_ingalls_wilder", "people.person.places_lived", "m.cvt01"),
            ("m.cvt01", "people.place_lived.location", "de_smet"),
        ),
        hops=3,
    ),
    ToyQuestion(
        "toy-09", "In which country was Gustave Eiffel born, and what is the capital of that country?",
        ("Gustave Eiffel",), "Paris",
        relevant=(
            ("gustave_eiffel", "people.person.place_of_birth", "dijon"),
            ("dijon", "location.location.containedby", "france"),
            ("france", "location.country.capital", "paris"),
        ),
        hops=3,
    ),
    ToyQuestion(
        "toy-10", "What is the capital of Nepaal?", ("Nepal",), "Kathmandu",
        corrected="What is the capital of Nepal?",
        relevant=(("nepal", "location.country.capital", "kathmandu"),),
    ),
    ToyQuestion(
        "toy-11", 'Find the person who said "Taste cannot be controlled by law", what did this person die from?',
        ("Taste cannot be controlled by law",), "Natural causes",
        cot_answer="Natural causes", filtering="empty", expect="cot_fallback",
    ),
    ToyQuestion(
        "toy-12", "Who painted the Mona Lisa?", ("Mona Lisa",), "Leonardo da Vinci",
        cot_answer="Leonardo da Vinci", expect="cot_fallback",
    ),
    ToyQuestion(
        "toy-13", "What is the official language of the country containing the city where the Eiffel Tower stands?",
        ("Eiffel Tower",), "French",
        relevant=(
            ("eiffel_tower", "location.location.containedby", "paris"),
            ("paris", "location.location.containedby", "france"),
            ("france", "location.country.official_language", "french"),
        ),
        cot_answer="French", verdicts="never", hops=3, expect="cot_fallback",
    ),
)


def toy_items(questions=None) -> list[QAItem]:
    return [QAItem(q.id, q.question, [[q.answer]], list(q.keywords)) for q in questions or TOY_QUESTIONS]


def _block_after(prompt: str, header: str) -> list[str]:
    """Lines after the last ``header`` line up to the next ``Name:`` header or the end."""
    idx = prompt.rfind(f"\n{header}: \n")
    if idx < 0:
        return []
    out = []
    for line in prompt[idx + len(header) + 4:].splitlines():
        if re.match(r"^[A-Z][A-Za-z ]*: $", line) or line.startswith("Let's think"):
            break
        if line.strip() and not line.startswith("Respond in the exact format"):
            out.append(line)
    return out


def _norm(s: str) -> str:
    return " ".join(s.casefold().split())


@dataclass
class ScriptedLLM:
    """Backend answering the toy questions as a perfectly informed LLM would."""

    store: GraphStore
    questions: tuple[ToyQuestion, ...] = TOY_QUESTIONS
    calls: int = field(default=0, init=False)

    def _script(self, question: str) -> ToyQuestion:
        for q in self.questions:
            if question in (q.question, q.corrected):
                return q
        raise KeyError(f"no script for question {question!r}")

    def _labels(self, triples) -> set[tuple[str, str, str]]:
        return {(_norm(self.store.label(h)), _norm(r), _norm(self.store.label(t))) for h, r, t in triples}

    def __call__(self, request: LlmRequest) -> str:
        self.calls += 1
        prompt = request.prompt
        lines = _block_after(prompt, "Question")
        script = self._script(lines[0] if lines else "")
        relevant = self._labels(script.relevant)
        tid = TemplateId(request.template_id)

        if tid is TemplateId.KEYWORD_EXTRACTION:
            kws = ", ".join(script.keywords)
            return f"Corrected question: {script.corrected}\n{kws}" if script.corrected else kws

        if tid is TemplateId.RELATION_PRUNING:
            names = "".join(_block_after(prompt, "Relations")).split("; ")
            wanted = {r for _, r, _ in relevant}
            hits = [n for n in names if _norm(n) in wanted]
            scores = {n: (1.0 / len(hits) if n in hits else 0.0) for n in names}
            return "\n".join(f"{i}. {{{n} (Score: {s:.2f})}}: scripted relevance." for i, (n, s) in enumerate(scores.items(), 1))

        if tid is TemplateId.ENTITY_PRUNING:
            relation = _norm(_block_after(prompt, "Relation")[0])
            names = "".join(_block_after(prompt, "Entities")).split("; ")
            ends = {h for h, r, _ in relevant if r == relation} | {t for _, r, t in relevant if r == relation}
            flags = [1.0 if _norm(re.sub(r" \[[^\]]+\]$", "", n)) in ends else 0.0 for n in names]
            return "Score: " + ", ".join(f"{f:.1f}" for f in flags)

        if tid is TemplateId.TRIPLE_FILTERING:
            if script.filtering == "empty":
                return ""
            shown = _block_after(prompt, "Triples")
            keep = [ln for ln in shown
                    if any(tuple(_norm(x) for x in t) in relevant for t in parse_triple_list(ln).triples)]
            return "\n".join(keep)

        if tid is TemplateId.SUFFICIENCY_EVALUATION:
            shown = {tuple(_norm(x) for x in t) for t in parse_triple_list("\n".join(_block_after(prompt, "Triples"))).triples}
            if script.verdicts != "never" and self._labels(script.needed) <= shown:
                return ("{Yes}. Based on the given knowledge triplets, the evidence is complete. "
                        f"Therefore, the answer to the question is {{{script.answer}}}.")
            return "{No}. Based on the given knowledge triplets, it's not sufficient to answer the entire question."

        if tid is TemplateId.COT_FALLBACK:
            return f"Recalling what I know about this question step by step. The answer is {{{script.cot_answer or script.answer}}}."

        raise KeyError(f"unsupported template {tid}")


def record_toy_cache(path: str | Path, questions=None, config: PipelineConfig | None = None):
    """Run the toy questions against :class:`ScriptedLLM` and record every call into `path`.

    Returns the traces, one per question.
    """
    from .entity_index import HashingEmbedder, build_index
    from .llm_gateway import LlmGateway, ReplayCache
    from .supervisor import answer_question

    store = load_toy_graph()
    config = config or toy_config(Mode.RECORD)
    index = build_index(store, HashingEmbedder(config.embedding.dimension))
    gateway = LlmGateway(ScriptedLLM(store, tuple(questions or TOY_QUESTIONS)), ReplayCache(path), Mode.RECORD)
    return [answer_question(q.question, store, index, gateway, config) for q in questions or TOY_QUESTIONS]
