"""
Answering questions offline from a recorded transcript
======================================================

Every LLM call the pipeline makes is keyed by a hash of its prompt. The
bundled cache holds the replies of a scripted LLM for the toy questions,
so the whole pipeline runs here without a network connection.
"""

from anchorrag import HashingEmbedder, LlmGateway, Mode, ReplayCache, answer_question, build_index, hit_at_1
from anchorrag.toy import TOY_DIMENSION, TOY_QUESTIONS, data_path, load_toy_graph, toy_config

store = load_toy_graph()
index = build_index(store, HashingEmbedder(TOY_DIMENSION))
gateway = LlmGateway(None, ReplayCache(data_path("toy_replay.jsonl")), Mode.REPLAY)
config = toy_config()

###############################################################################
# Run each question. Retrieved answers come with the knowledge paths that
# support them; the rest fall back to the model's own knowledge.

for q in TOY_QUESTIONS:
    trace = answer_question(q.question, store, index, gateway, config)
    ans = trace.answer
    mark = "ok" if hit_at_1(ans, [[q.answer]]) else "miss"
    print(f"[{mark}] {q.question}")
    print(f"      -> {ans.text}  ({ans.provenance.value}, {trace.num_rounds} rounds, stopped on {trace.termination})")
    for path in ans.supporting_paths[:1]:
        print("         " + " | ".join(f"{s.triple.head} {s.triple.relation} {s.triple.tail}" for s in path.steps))

print("network calls:", gateway.network_calls)

###############################################################################
# A trace is plain JSON, byte-identical across replays.

trace = answer_question(TOY_QUESTIONS[4].question, store, index, gateway, config)
print(trace.to_json()[:600], "...")
