"""Independent brute-force reference implementations used by the tests.

Nothing here imports numpy or the package's scoring code: vectors are
plain lists and every ranking is a full sort.
"""
from __future__ import annotations

import hashlib
import math
import random
import string

DECIMALS = 12


def hash_embed(text: str, dim: int) -> list[float]:
    padded = " " + " ".join(text.lower().split()) + " "
    vec = [0.0] * dim
    for n in (2, 3):
        for i in range(len(padded) - n + 1):
            h = int.from_bytes(hashlib.blake2b(padded[i:i + n].encode("utf-8"), digest_size=8).digest(), "little")
            vec[h % dim] += 1.0
    norm = math.sqrt(sum(v * v for v in vec))
    return [v / norm for v in vec]


def dot(a, b) -> float:
    return math.fsum(x * y for x, y in zip(a, b))


def is_schema(relation: str, rules) -> bool:
    return any(relation.startswith(r[:-1]) if r.endswith("*") else relation == r for r in rules)


def grounding_oracle(triples, candidates, question, dim, k, m, rules):
    """Scores for every candidate and the selected top-m ids.

    `candidates` is a list of (entity, similarity). The score of an entity is
    the mean of its k highest question-relation similarities, over distinct
    non-schema relation names on either side of it.
    """
    q = hash_embed(question, dim)
    scores = {}
    for ent, _ in candidates:
        rels = {r for h, r, t in triples if ent in (h, t) and not is_schema(r, rules)}
        sims = sorted((dot(hash_embed(r, dim), q) for r in rels), reverse=True)
        scores[ent] = math.fsum(sims[:k]) / len(sims[:k]) if sims else None
    with_rel = [(e, s) for e, s in candidates if scores[e] is not None]
    without = [(e, s) for e, s in candidates if scores[e] is None]
    with_rel.sort(key=lambda es: (-round(scores[es[0]], DECIMALS), -round(es[1], DECIMALS), es[0]))
    without.sort(key=lambda es: (-round(es[1], DECIMALS), es[0]))
    return scores, [e for e, _ in (with_rel + without)[:m]]


def search_oracle(entries, query, dim, n):
    """entries: (entity, text) pairs. Returns [(entity, best score)] for the top n."""
    q = hash_embed(query, dim)
    best: dict[str, float] = {}
    for ent, text in entries:
        s = dot(hash_embed(text, dim), q)
        best[ent] = max(best.get(ent, -2.0), s)
    ranked = sorted(best.items(), key=lambda kv: (-round(kv[1], DECIMALS), kv[0]))
    return ranked[:n]


def random_word(rng: random.Random, lo=3, hi=9) -> str:
    return "".join(rng.choice(string.ascii_lowercase) for _ in range(rng.randint(lo, hi)))


def random_graph(rng: random.Random, n_entities: int, n_relations: int, max_degree: int = 20):
    """Triples over entities e0000.. with relation names like ``dom.type.prop``.

    No entity touches more than `max_degree` distinct relation names.
    Some relations fall under the default schema prefixes.
    """
    names = [f"{random_word(rng)}.{random_word(rng)}.{random_word(rng)}" for _ in range(n_relations)]
    names += ["type.object.type", "common.topic.notable_types", "sameAs"]
    ents = [f"e{i:04d}" for i in range(n_entities)]
    rels: dict[str, set[str]] = {e: set() for e in ents}
    triples = set()
    for e in ents:
        for r in rng.sample(names, rng.randint(0, min(max_degree, len(names)))):
            t = rng.choice(ents)
            if len(rels[e] | {r}) <= max_degree and len(rels[t] | {r}) <= max_degree:
                rels[e].add(r)
                rels[t].add(r)
                triples.add((e, r, t))
    return ents, names, sorted(triples)
