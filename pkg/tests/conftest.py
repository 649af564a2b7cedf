import pytest

from anchorrag.entity_index import HashingEmbedder, build_index
from anchorrag.toy import TOY_DIMENSION, load_toy_graph, record_toy_cache


@pytest.fixture(scope="session")
def toy_store():
    return load_toy_graph()


@pytest.fixture(scope="session")
def toy_index(toy_store):
    return build_index(toy_store, HashingEmbedder(TOY_DIMENSION))


@pytest.fixture(scope="session")
def toy_cache(tmp_path_factory):
    """A replay cache freshly recorded from the scripted LLM."""
    path = tmp_path_factory.mktemp("cache") / "toy_replay.jsonl"
    record_toy_cache(path)
    return path
