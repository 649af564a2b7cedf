"""Pipeline configuration, loadable from a JSON document.

Defaults: search depth 3, expansion width 3, 5 grounding relations per
candidate anchor, 3 retriever agents.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .kg_store import DEFAULT_SCHEMA_RULES
from .llm_gateway import Mode


class ConfigError(ValueError):
    pass


@dataclass
class LlmSettings:
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-4o-mini"
    api_key_env: str = "OPENAI_API_KEY"
    temperature: float = 0.0
    max_tokens: int = 512
    retries: int = 3
    max_in_flight: int = 4
    requests_per_minute: float | None = None
    cache_path: str | None = None


@dataclass
class EmbeddingSettings:
    provider: str = "hashing"  # "hashing" or "http"
    dimension: int = 64
    base_url: str | None = None
    model: str | None = None
    api_key_env: str | None = None
    max_in_flight: int = 4
    humanize_relations: bool = False


@dataclass
class PipelineConfig:
    max_depth: int = 3
    width: int = 3
    top_k_relations: int = 5
    num_agents: int = 3
    per_keyword_n: int = 10
    similarity_floor: float = 0.3
    entity_cap: int = 50
    agent_call_budget: int = 40
    timeout_seconds: float | None = 120.0
    workers: int = 1
    schema_rules: list[str] = field(default_factory=lambda: list(DEFAULT_SCHEMA_RULES))
    mode: Mode = Mode.REPLAY
    llm: LlmSettings = field(default_factory=LlmSettings)
    embedding: EmbeddingSettings = field(default_factory=EmbeddingSettings)

    def __post_init__(self):
        self.mode = Mode(self.mode)
        for name in ("max_depth", "width", "top_k_relations", "num_agents", "per_keyword_n",
                     "entity_cap", "agent_call_budget", "workers"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if not -1.0 <= self.similarity_floor <= 1.0:
            raise ConfigError("similarity_floor must lie in [-1, 1]")
        if self.timeout_seconds is not None and self.timeout_seconds <= 0:
            raise ConfigError("timeout_seconds must be positive or null")

    @property
    def effective_timeout(self) -> float | None:
        # replays are bounded by the cache, not the clock
        return None if self.mode is Mode.REPLAY else self.timeout_seconds

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "PipelineConfig":
        data = dict(data)
        _reject_unknown(cls, data, "config")
        for key, sub in (("llm", LlmSettings), ("embedding", EmbeddingSettings)):
            if key in data:
                if not isinstance(data[key], dict):
                    raise ConfigError(f"{key} must be an object")
                _reject_unknown(sub, data[key], key)
                data[key] = sub(**data[key])
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["mode"] = self.mode.value
        return out


def _reject_unknown(cls, data: dict, where: str) -> None:
    unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
    if unknown:
        raise ConfigError(f"unknown {where} key(s): {', '.join(sorted(unknown))}")
