import json

import pytest

from anchorrag.config import ConfigError, PipelineConfig
from anchorrag.llm_gateway import Mode


def test_defaults():
    c = PipelineConfig()
    assert (c.max_depth, c.width, c.top_k_relations, c.num_agents) == (3, 3, 5, 3)
    assert c.mode is Mode.REPLAY and c.effective_timeout is None
    assert PipelineConfig(mode="live").effective_timeout == 120.0


@pytest.mark.parametrize("field", ["max_depth", "width", "top_k_relations", "num_agents", "per_keyword_n", "agent_call_budget", "workers"])
@pytest.mark.parametrize("value", [0, -1, True, 2.5])
def test_non_positive_counts_are_rejected(field, value):
    with pytest.raises(ConfigError, match=field):
        PipelineConfig.from_dict({field: value})


def test_unknown_keys_are_rejected_at_every_level():
    with pytest.raises(ConfigError, match="beam"):
        PipelineConfig.from_dict({"beam": 3})
    with pytest.raises(ConfigError, match="llm"):
        PipelineConfig.from_dict({"llm": {"modle": "x"}})


def test_round_trip(tmp_path):
    c = PipelineConfig.from_dict({"width": 2, "mode": "record", "embedding": {"dimension": 128}, "llm": {"cache_path": "c.jsonl"}})
    path = tmp_path / "c.json"
    path.write_text(json.dumps(c.to_dict()))
    assert PipelineConfig.load(path) == c
