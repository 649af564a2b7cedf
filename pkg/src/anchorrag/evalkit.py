"""Datasets, metrics, typo injection and batch evaluation.

Matching convention (used by both metrics): after :func:`normalize_text`,
a gold alias matches a prediction when it equals one of the predicted
answer entities or occurs as a contiguous run of whole tokens in the
prediction text. Hit@1 is 1 when any gold answer matches; accuracy is the
fraction of gold answers matched, so the two coincide for single-answer
questions.
"""
from __future__ import annotations

import hashlib
import json
import logging
import random
import re
import string
import unicodedata
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, NamedTuple, Sequence

log = logging.getLogger(__name__)

FORMATS = ("jsonl", "webqsp", "cwq", "grailqa", "webquestions")


class DatasetError(ValueError):
    pass


@dataclass
class QAItem:
    id: str
    question: str
    gold_answers: list[list[str]]
    keywords: list[str] = field(default_factory=list)

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"id": self.id, "question": self.question, "answers": self.gold_answers}
        if self.keywords:
            out["keywords"] = self.keywords
        return out


class LoadedDataset(NamedTuple):
    items: list[QAItem]
    skipped: int


def _aliases(ans) -> list[str]:
    if isinstance(ans, str):
        vals = [ans]
    elif isinstance(ans, list):
        vals = ans
    elif isinstance(ans, dict):
        vals = [ans.get("answer") or ans.get("entity_name") or ans.get("EntityName"), *(ans.get("aliases") or [])]
        vals.append(ans.get("answer_argument") or ans.get("AnswerArgument"))
    else:
        vals = []
    return list(dict.fromkeys(str(v).strip() for v in vals if v is not None and str(v).strip()))


def _item(qid, question, answers, keywords=()) -> QAItem | None:
    if not isinstance(question, str) or not question.strip() or not isinstance(answers, list):
        return None
    golds = [a for a in (_aliases(x) for x in answers) if a]
    if not golds:
        return None
    kws = [k for k in keywords if isinstance(k, str) and k.strip()]
    return QAItem(str(qid), question.strip(), golds, list(dict.fromkeys(kws)))


def _webquestions_targets(target: str) -> list[str]:
    return [a or b for a, b in re.findall(r'\(description (?:"((?:[^"\\]|\\.)*)"|([^)]*))\)', target)]


def _records(path: Path, fmt: str) -> Iterable[tuple[Any, QAItem | None]]:
    if fmt == "jsonl":
        with path.open(encoding="utf-8") as fh:
            for n, line in enumerate(fh):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError:
                    yield n, None
                    continue
                if not isinstance(rec, dict):
                    yield n, None
                    continue
                yield n, _item(rec.get("id", n), rec.get("question"), rec.get("answers"), rec.get("keywords") or ())
        return

    data = json.loads(path.read_text(encoding="utf-8"))
    if fmt == "webqsp":
        for n, rec in enumerate(data.get("Questions", []) if isinstance(data, dict) else data):
            answers, topics = [], []
            for parse in rec.get("Parses") or []:
                answers.extend(parse.get("Answers") or [])
                if parse.get("TopicEntityName"):
                    topics.append(parse["TopicEntityName"])
            question = rec.get("RawQuestion") or rec.get("ProcessedQuestion")
            yield n, _item(rec.get("QuestionId", n), question, answers, topics)
    elif fmt == "cwq":
        for n, rec in enumerate(data):
            answers = rec.get("answers")
            if answers is None and rec.get("answer") is not None:
                answers = [rec["answer"]]
            yield n, _item(rec.get("ID", n), rec.get("question"), answers)
    elif fmt == "grailqa":
        for n, rec in enumerate(data):
            topics = [node.get("friendly_name") for node in (rec.get("graph_query") or {}).get("nodes", []) if node.get("node_type") == "entity"]
            yield n, _item(rec.get("qid", n), rec.get("question"), rec.get("answer"), topics)
    elif fmt == "webquestions":
        for n, rec in enumerate(data):
            yield n, _item(n, rec.get("utterance"), _webquestions_targets(rec.get("targetValue", "")))
    else:
        raise DatasetError(f"unknown dataset format {fmt!r}; expected one of {', '.join(FORMATS)}")


def load_dataset(path: str | Path, fmt: str = "jsonl") -> LoadedDataset:
    if fmt not in FORMATS:
        raise DatasetError(f"unknown dataset format {fmt!r}; expected one of {', '.join(FORMATS)}")
    items, skipped = [], 0
    for n, item in _records(Path(path), fmt):
        if item is None:
            skipped += 1
            log.debug("%s: skipped malformed record %s", path, n)
        else:
            items.append(item)
    if not items:
        raise DatasetError(f"{path}: no loadable records ({skipped} malformed)")
    return LoadedDataset(items, skipped)


def write_jsonl(items: Iterable[QAItem], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for it in items:
            fh.write(json.dumps(it.to_json(), ensure_ascii=False) + "\n")


def merge_jsonl(paths: Sequence[str | Path], out: str | Path) -> int:
    """Concatenate generic JSON-lines datasets; later duplicates of an id are dropped."""
    seen: dict[str, QAItem] = {}
    for p in paths:
        for it in load_dataset(p, "jsonl").items:
            seen.setdefault(it.id, it)
    write_jsonl(seen.values(), out)
    return len(seen)


# --- metrics ---------------------------------------------------------------

_ARTICLES = re.compile(r"\b(a|an|the)\b")


def _is_punct(ch: str) -> bool:
    return ch in string.punctuation or unicodedata.category(ch).startswith("P")


def normalize_text(s: str) -> str:
    s = "".join(ch for ch in s.lower() if not _is_punct(ch))
    return " ".join(_ARTICLES.sub(" ", s).split())


def _contains_tokens(haystack: list[str], needle: list[str]) -> bool:
    n = len(needle)
    return any(haystack[i:i + n] == needle for i in range(len(haystack) - n + 1))


def _prediction_parts(prediction) -> tuple[str, list[str]]:
    if isinstance(prediction, str):
        return prediction, [prediction]
    text = getattr(prediction, "text", "") or ""
    return text, list(getattr(prediction, "answer_entities", None) or [text])


def _gold_matched(aliases: Sequence[str], text_tokens: list[str], entities: set[str]) -> bool:
    for alias in aliases:
        a = normalize_text(alias)
        if a and (a in entities or _contains_tokens(text_tokens, a.split())):
            return True
    return False


def _match_flags(prediction, golds: Sequence[Sequence[str] | str]) -> list[bool]:
    text, ents = _prediction_parts(prediction)
    tokens = normalize_text(text).split()
    ent_set = {normalize_text(e) for e in ents} - {""}
    return [_gold_matched([g] if isinstance(g, str) else g, tokens, ent_set) for g in golds]


def hit_at_1(prediction, golds: Sequence[Sequence[str] | str]) -> int:
    return int(any(_match_flags(prediction, golds)))


def exact_accuracy(prediction, golds: Sequence[Sequence[str] | str]) -> float:
    flags = _match_flags(prediction, golds)
    return sum(flags) / len(flags) if flags else 0.0


def aggregate_metrics(pairs: Iterable[tuple[Any, Sequence]]) -> tuple[float, float]:
    """Mean Hit@1 and accuracy, both in percent, over (prediction, golds) pairs."""
    hits, accs = [], []
    for pred, golds in pairs:
        hits.append(hit_at_1(pred, golds))
        accs.append(exact_accuracy(pred, golds))
    if not hits:
        return 0.0, 0.0
    return 100.0 * sum(hits) / len(hits), 100.0 * sum(accs) / len(accs)


# --- typo injection --------------------------------------------------------

EDIT_OPS = ("swap", "delete", "substitute")


@dataclass(frozen=True)
class NoiseSpec:
    seed: int
    edits: int = 1
    ops: tuple[str, ...] = EDIT_OPS

    def __post_init__(self):
        if self.edits < 1:
            raise ValueError("edits must be >= 1")
        if not self.ops or set(self.ops) - set(EDIT_OPS):
            raise ValueError(f"ops must be a non-empty subset of {EDIT_OPS}")


class NoisedQuestion(NamedTuple):
    text: str
    missing: list[str]


def _edit_once(word: list[str], op: str, rng: random.Random) -> bool:
    alnum = [i for i, ch in enumerate(word) if ch.isalnum()]
    if op == "swap":
        pairs = [i for i in alnum if i + 1 < len(word) and word[i + 1].isalnum() and word[i] != word[i + 1]]
        if not pairs:
            return False
        i = rng.choice(pairs)
        word[i], word[i + 1] = word[i + 1], word[i]
    elif op == "delete":
        if len(word) < 2 or not alnum:
            return False
        del word[rng.choice(alnum)]
    else:
        if not alnum:
            return False
        i = rng.choice(alnum)
        pool = string.digits if word[i].isdigit() else string.ascii_lowercase
        choices = [c for c in pool if c != word[i].lower()]
        new = rng.choice(choices)
        word[i] = new.upper() if word[i].isupper() else new
    return True


def _mutate(original: str, spec: NoiseSpec, rng: random.Random) -> str:
    word = list(original)
    done = 0
    while done < spec.edits:
        ops = list(spec.ops)
        rng.shuffle(ops)
        if not any(_edit_once(word, op, rng) for op in ops):
            break
        done += 1
    return "".join(word)


def inject_typos(question: str, keywords: Sequence[str], spec: NoiseSpec) -> NoisedQuestion:
    """Apply `spec.edits` random character edits to every occurrence of each keyword.

    Text outside the keyword spans is left byte-identical. Keywords that do
    not occur in the question (case-insensitively) are reported in `missing`.
    """
    spans: list[tuple[int, int]] = []
    missing, targeted = [], []
    for kw in sorted(dict.fromkeys(k for k in keywords if k.strip()), key=lambda k: (-len(k), k)):
        found = False
        for m in re.finditer(re.escape(kw), question, re.IGNORECASE):
            if all(m.end() <= s or m.start() >= e for s, e in spans):
                spans.append((m.start(), m.end()))
                found = True
        (targeted if found else missing).append(kw)
    spans.sort()
    rng = random.Random(spec.seed)
    result = question
    for _ in range(100):
        pieces, last = [], 0
        for s, e in spans:
            pieces += [question[last:s], _mutate(question[s:e], spec, rng)]
            last = e
        result = "".join(pieces) + question[last:]
        folded = result.casefold()
        if not any(kw.casefold() in folded for kw in targeted):
            break
    else:
        log.warning("could not hide all keywords in %r", question)
    return NoisedQuestion(result, missing)


def item_seed(seed: int, item_id: str) -> int:
    return int.from_bytes(hashlib.sha256(f"{seed}:{item_id}".encode()).digest()[:8], "little")


def noise_dataset(items: Sequence[QAItem], seed: int, edits: int = 1, ops: tuple[str, ...] = EDIT_OPS) -> list[dict[str, Any]]:
    """Typo-noised copies of `items` in the generic JSON-lines schema."""
    out = []
    for it in items:
        res = inject_typos(it.question, it.keywords, NoiseSpec(item_seed(seed, it.id), edits, ops))
        rec = it.to_json()
        rec.update(question=res.text, original_question=it.question)
        if res.missing or not it.keywords:
            rec["noise_flags"] = {"missing_keywords": res.missing, "no_keywords": not it.keywords}
        out.append(rec)
    return out


# --- batch evaluation ------------------------------------------------------

@dataclass
class EvalRecord:
    id: str
    question: str
    prediction: str
    answer_entities: list[str]
    hit: int
    acc: float
    provenance: str | None
    rounds: int
    calls: int
    error: str | None = None


@dataclass
class EvalReport:
    records: list[EvalRecord]
    hit_at_1: float
    accuracy: float
    retrieved_fraction: float
    fallback_fraction: float

    @classmethod
    def from_records(cls, records: list[EvalRecord]) -> "EvalReport":
        n = len(records) or 1
        return cls(
            records,
            100.0 * sum(r.hit for r in records) / n,
            100.0 * sum(r.acc for r in records) / n,
            sum(r.provenance == "retrieved" for r in records) / n,
            sum(r.provenance == "cot_fallback" for r in records) / n,
        )

    def summary(self) -> dict[str, Any]:
        return {
            "items": len(self.records),
            "hit_at_1": self.hit_at_1,
            "accuracy": self.accuracy,
            "retrieved_fraction": self.retrieved_fraction,
            "fallback_fraction": self.fallback_fraction,
            "errors": sum(r.error is not None for r in self.records),
        }


def summary_path(out_path: str | Path) -> Path:
    out_path = Path(out_path)
    return out_path.with_name(out_path.name + ".summary.json")


def _evaluate_item(item: QAItem, answer_fn: Callable[[str], Any]) -> EvalRecord:
    try:
        trace = answer_fn(item.question)
    except Exception as exc:
        return EvalRecord(item.id, item.question, "", [], 0, 0.0, None, 0, 0, f"{type(exc).__name__}: {exc}")
    ans = trace.answer
    return EvalRecord(
        item.id,
        item.question,
        ans.text,
        list(ans.answer_entities),
        hit_at_1(ans, item.gold_answers),
        exact_accuracy(ans, item.gold_answers),
        ans.provenance.value,
        trace.num_rounds,
        len(trace.all_calls()),
        ans.error,
    )


def run_eval(
    items: Sequence[QAItem],
    store,
    index,
    gateway,
    config,
    out_path: str | Path,
    answer_fn: Callable[[str], Any] | None = None,
) -> EvalReport:
    """Answer every item not already scored in `out_path` and write the report.

    Per-item records are appended in dataset order, using ``config.workers``
    threads; the summary goes to ``<out_path>.summary.json``. `answer_fn`
    replaces the full pipeline (question -> AnswerTrace) when given.
    """
    if answer_fn is None:
        from .supervisor import answer_question

        def answer_fn(question: str):
            return answer_question(question, store, index, gateway, config)

    workers = getattr(config, "workers", 1)
    out_path = Path(out_path)
    done: dict[str, EvalRecord] = {}
    if out_path.exists():
        with out_path.open(encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = EvalRecord(**json.loads(line))
                    done[rec.id] = rec
    todo = [it for it in items if it.id not in done]
    if todo:
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            fresh = list(pool.map(lambda it: _evaluate_item(it, answer_fn), todo))
        with out_path.open("a", encoding="utf-8") as fh:
            for rec in fresh:
                fh.write(json.dumps(asdict(rec), sort_keys=True, ensure_ascii=False) + "\n")
                done[rec.id] = rec
    report = EvalReport.from_records([done[it.id] for it in items if it.id in done])
    summary_path(out_path).write_text(json.dumps(report.summary(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return report
