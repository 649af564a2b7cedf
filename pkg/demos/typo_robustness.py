"""
Misspelled questions
====================

Typos are injected inside keyword spans only, so the rest of the question
is untouched. Name search still recovers most anchors from the noisy text.
"""

from anchorrag import HashingEmbedder, build_index, search_entities
from anchorrag.evalkit import NoiseSpec, inject_typos
from anchorrag.toy import TOY_DIMENSION, TOY_QUESTIONS, load_toy_graph

store = load_toy_graph()
index = build_index(store, HashingEmbedder(TOY_DIMENSION))

###############################################################################
# One edit per keyword, seeded so the output is reproducible.

found = 0
total = 0
for q in TOY_QUESTIONS:
    noisy = inject_typos(q.question, q.keywords, NoiseSpec(seed=7, edits=1))
    if noisy.missing:
        continue
    print(noisy.text)
    for kw in q.keywords:
        start = q.question.lower().find(kw.lower())
        garbled = noisy.text[start:start + len(kw) + 1].rstrip('?,"\' ')
        best = search_entities(index, garbled, 1)[0]
        total += 1
        found += store.label(best.entity).lower() == kw.lower() or kw in store.entities[best.entity].aliases
        print(f"    {kw!r} became {garbled!r}; best match {store.label(best.entity)!r} ({best.score:.2f})")

print(f"{found}/{total} keywords still resolve to their entity")
