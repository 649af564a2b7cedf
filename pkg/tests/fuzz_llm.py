"""An LLM stand-in that answers every template with seeded random output.

The seed mixes a run seed with the prompt hash, so a given prompt always
gets the same reply within a run. Replies are sometimes malformed on
purpose to exercise retries and fallbacks.
"""
from __future__ import annotations

import hashlib
import random
import re

from anchorrag.llm_gateway import LlmRequest, TemplateId


def _block(prompt: str, header: str) -> list[str]:
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


class RandomLLM:
    def __init__(self, seed: int, garbage_rate: float = 0.1):
        self.seed = seed
        self.garbage_rate = garbage_rate

    def __call__(self, request: LlmRequest) -> str:
        digest = hashlib.sha256(f"{self.seed}:{request.prompt}".encode()).digest()
        rng = random.Random(int.from_bytes(digest[:8], "little"))
        if rng.random() < self.garbage_rate:
            return "I am not sure how to answer that."
        tid = TemplateId(request.template_id)
        if tid is TemplateId.KEYWORD_EXTRACTION:
            words = re.findall(r"[A-Z][\w'-]*(?: [A-Z][\w'-]*)*", _block(request.prompt, "Question")[0])
            return ", ".join(rng.sample(words, min(len(words), rng.randint(1, 3))))
        if tid is TemplateId.RELATION_PRUNING:
            names = "".join(_block(request.prompt, "Relations")).split("; ")
            return "\n".join(f"{{{n} (Score: {rng.choice([0.0, 0.1, 0.3, 0.5, 1.0])})}}: reason" for n in names)
        if tid is TemplateId.ENTITY_PRUNING:
            n = len("".join(_block(request.prompt, "Entities")).split("; "))
            return "Score: " + ", ".join(str(rng.choice([0.0, 0.2, 0.5, 1.0])) for _ in range(n + rng.randint(-1, 1)))
        if tid is TemplateId.TRIPLE_FILTERING:
            lines = _block(request.prompt, "Triples")
            kept = [ln for ln in lines if rng.random() < 0.6]
            if rng.random() < 0.2:
                kept.append("Invented Entity, made.up.relation, Elsewhere")
            return "\n".join(kept)
        if tid is TemplateId.SUFFICIENCY_EVALUATION:
            if rng.random() < 0.3:
                return "{Yes}. The answer to the question is {Somewhere}."
            return "{No}. Not enough information."
        return "Thinking it through, the answer is {Somewhere}."
