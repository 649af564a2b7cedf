"""
Finding anchor entities
=======================

A question names its topic loosely, so the predictor first gathers every
entity whose name resembles a keyword, then re-ranks them by how well the
relations around each entity fit the question.
"""

from anchorrag import HashingEmbedder, build_index, ground_candidates, search_entities
from anchorrag.predictor import generate_candidate_entities
from anchorrag.toy import TOY_DIMENSION, load_toy_graph

store = load_toy_graph()
index = build_index(store, HashingEmbedder(TOY_DIMENSION))
print(f"{len(store)} triples, {len(index.entity_ids)} entities, {len(index)} names indexed")

###############################################################################
# Name search tolerates small misspellings: character n-grams still overlap.

for query in ["Eiffel Tower", "Eifel Towr", "Nepaal"]:
    hits = search_entities(index, query, 3)
    print(query, "->", [(h.entity, round(h.score, 3)) for h in hits])

###############################################################################
# Candidates below the similarity floor are dropped. Nothing in the toy
# graph looks like "Mona Lisa", so that question gets no anchor at all.

print(generate_candidate_entities(["Mona Lisa"], index))

###############################################################################
# Grounding: each candidate is scored by the mean similarity between the
# question and its best-matching relations. An entity with one relation
# that fits well can outrank the intended one, whose score is diluted by
# many unrelated relations. This is why several anchors, each with its own
# retriever agent, are kept rather than one.

question = "What is the capital of France?"
candidates = generate_candidate_entities(["France"], index)
for anchor in ground_candidates(candidates, question, store, index.provider, k=5, m=3):
    rels = ", ".join(f"{r} ({s:.2f})" for r, s in anchor.top_relations[:2])
    print(f"{anchor.entity:12s} score={anchor.grounding_score:.3f}  via {rels}")
