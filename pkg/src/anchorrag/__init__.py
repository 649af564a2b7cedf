"""Question answering over knowledge graphs with anchor entities and cooperating LLM agents."""
from .config import ConfigError, EmbeddingSettings, LlmSettings, PipelineConfig
from .entity_index import EntityIndex, HashingEmbedder, HttpEmbedder, build_index, search_entities
from .kg_store import Direction, GraphStore, RelationEdge, SparqlStore, Triple, load_graph
from .llm_gateway import ChatCompletionClient, LlmGateway, Mode, ReplayCache, TemplateId
from .predictor import ground_candidates, identify_anchors
from .retriever import KnowledgePath, RetrieverState, retrieve_step
from .supervisor import Answer, AnswerTrace, Provenance, answer_question
from .evalkit import QAItem, exact_accuracy, hit_at_1, inject_typos, load_dataset, run_eval

__all__ = [
    "Answer", "AnswerTrace", "ChatCompletionClient", "ConfigError", "Direction", "EmbeddingSettings",
    "EntityIndex", "GraphStore", "HashingEmbedder", "HttpEmbedder", "KnowledgePath", "LlmGateway",
    "LlmSettings", "Mode", "PipelineConfig", "Provenance", "QAItem", "RelationEdge", "ReplayCache",
    "RetrieverState", "SparqlStore", "TemplateId", "Triple", "answer_question", "build_index",
    "exact_accuracy", "ground_candidates", "hit_at_1", "identify_anchors", "inject_typos",
    "load_dataset", "load_graph", "retrieve_step", "run_eval", "search_entities",
]
