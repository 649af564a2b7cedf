"""Text embeddings and a brute-force vector index over entity names.

Every vector handed out by :func:`embed_text` or stored in an
:class:`EntityIndex` has unit L2 norm, so inner products are cosine
similarities in ``[-1, 1]``.

The offline embedder, :class:`HashingEmbedder`, is defined bit-exactly so
its output can be reproduced without this package:

1. lowercase the text and collapse runs of whitespace to one space;
2. pad with one space on each side;
3. for every character 2-gram and 3-gram ``g`` of the padded string, take
   ``h = int.from_bytes(blake2b(g.encode("utf-8"), digest_size=8).digest(), "little")``
   and add 1.0 to component ``h % dim``;
4. divide by the L2 norm.
"""
from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import httpx
import numpy as np

from .kg_store import EntityId, GraphStore

# Scores are compared after rounding to this many decimals, so values that
# agree to within float noise tie and fall back to the EntityId order.
SCORE_DECIMALS = 12


class ProviderError(RuntimeError):
    """Embedding backend failed; the call may be retried."""


class PartialBuildError(RuntimeError):
    def __init__(self, missing: list[EntityId], cause: Exception):
        super().__init__(f"embedding failed for {len(missing)} entities: {cause}")
        self.missing = missing


class EmbeddingProvider(Protocol):
    name: str
    dimension: int

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        """Return an array of shape ``(len(texts), dimension)``."""


def _unit_rows(mat: np.ndarray) -> np.ndarray:
    mat = np.asarray(mat, dtype=np.float64)
    if not np.all(np.isfinite(mat)):
        raise ProviderError("embedding contains non-finite components")
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ProviderError("embedding provider returned a zero vector")
    return mat / norms


class HashingEmbedder:
    """Deterministic character n-gram hashing embedder (see module docstring)."""

    ngram_sizes = (2, 3)

    def __init__(self, dimension: int = 64):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self.name = f"hashing-ngram-{dimension}"

    def _vector(self, text: str) -> np.ndarray:
        padded = " " + " ".join(text.lower().split()) + " "
        vec = np.zeros(self.dimension)
        for n in self.ngram_sizes:
            for i in range(len(padded) - n + 1):
                digest = hashlib.blake2b(padded[i:i + n].encode("utf-8"), digest_size=8).digest()
                vec[int.from_bytes(digest, "little") % self.dimension] += 1.0
        return vec

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dimension))
        return _unit_rows(np.stack([self._vector(t) for t in texts]))


class HttpEmbedder:
    """Client for an OpenAI-style ``POST {base_url}/embeddings`` endpoint.

    Results are memoised per text, since grounding re-embeds the same
    relation names for many candidates.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str | None = None,
        dimension: int | None = None,
        max_in_flight: int = 4,
        retries: int = 3,
        timeout: float = 30.0,
        client: httpx.Client | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.retries = retries
        self.name = f"http:{model}"
        self._dimension = dimension
        self._client = client or httpx.Client(timeout=timeout)
        self._gate = threading.BoundedSemaphore(max_in_flight)
        self._memo: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    @property
    def dimension(self) -> int:
        if self._dimension is None:
            self._dimension = int(self.embed(["dimension probe"]).shape[1])
        return self._dimension

    def _post(self, texts: list[str]) -> np.ndarray:
        headers = {}
        if self.api_key_env and os.environ.get(self.api_key_env):
            headers["Authorization"] = f"Bearer {os.environ[self.api_key_env]}"
        last: Exception | None = None
        for _ in range(max(1, self.retries)):
            try:
                with self._gate:
                    resp = self._client.post(
                        f"{self.base_url}/embeddings",
                        json={"input": texts, "model": self.model},
                        headers=headers,
                    )
                resp.raise_for_status()
                data = resp.json()["data"]
                return np.array([row["embedding"] for row in data], dtype=np.float64)
            except (httpx.HTTPError, KeyError, ValueError) as exc:
                last = exc
        raise ProviderError(f"embedding request failed after {self.retries} attempts: {last}")

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        with self._lock:
            todo = [t for t in dict.fromkeys(texts) if t not in self._memo]
        if todo:
            vecs = _unit_rows(self._post(todo))
            with self._lock:
                self._memo.update(zip(todo, vecs))
        if not texts:
            return np.zeros((0, self._dimension or 0))
        out = np.stack([self._memo[t] for t in texts])
        if self._dimension is None:
            self._dimension = out.shape[1]
        elif out.shape[1] != self._dimension:
            raise ProviderError(f"expected dimension {self._dimension}, got {out.shape[1]}")
        return out


def embed_text(provider: EmbeddingProvider, text: str) -> np.ndarray:
    if not text or not text.strip():
        raise ValueError("cannot embed empty text")
    vec = np.asarray(provider.embed([text])[0], dtype=np.float64)
    if vec.shape != (provider.dimension,):
        raise ProviderError(f"expected dimension {provider.dimension}, got {vec.shape}")
    return _unit_rows(vec[None, :])[0]


def embed_many(provider: EmbeddingProvider, texts: Sequence[str]) -> np.ndarray:
    """Unit-normalised embeddings for `texts`, one row each."""
    if any(not t or not t.strip() for t in texts):
        raise ValueError("cannot embed empty text")
    if not texts:
        return np.zeros((0, provider.dimension))
    mat = np.asarray(provider.embed(list(texts)), dtype=np.float64)
    if mat.shape != (len(texts), provider.dimension):
        raise ProviderError(f"expected shape {(len(texts), provider.dimension)}, got {mat.shape}")
    return _unit_rows(mat)


def inner_product(a: Sequence[float], b: Sequence[float]) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(a @ b)


@dataclass(frozen=True)
class SearchHit:
    entity: EntityId
    score: float
    matched_text: str


class EntityIndex:
    """Entity-name vectors held entity-contiguously and in EntityId order."""

    def __init__(self, ids: list[EntityId], texts: list[str], vectors: np.ndarray, provider: EmbeddingProvider):
        order = sorted(range(len(ids)), key=lambda i: ids[i])
        self.ids = [ids[i] for i in order]
        self.texts = [texts[i] for i in order]
        self.vectors = np.asarray(vectors, dtype=np.float64).reshape(len(ids), -1)[order] if ids else np.zeros((0, provider.dimension))
        if self.vectors.shape[1] != provider.dimension:
            raise ValueError(f"index dimension {self.vectors.shape[1]} != provider dimension {provider.dimension}")
        self.provider = provider
        starts = [i for i in range(len(self.ids)) if i == 0 or self.ids[i] != self.ids[i - 1]]
        self._starts = np.array(starts, dtype=np.intp)
        self.entity_ids = [self.ids[i] for i in starts]

    def __len__(self) -> int:
        return len(self.ids)

    def save(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            header = {"format": "anchorrag-index", "version": 1, "dimension": int(self.vectors.shape[1]), "provider": self.provider.name}
            fh.write(json.dumps(header) + "\n")
            for eid, text, vec in zip(self.ids, self.texts, self.vectors):
                fh.write(json.dumps({"id": eid, "text": text, "vector": vec.tolist()}, ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path: str | Path, provider: EmbeddingProvider) -> "EntityIndex":
        with Path(path).open(encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            if header.get("format") != "anchorrag-index":
                raise ValueError(f"{path}: not an index file")
            if header["provider"] != provider.name:
                raise ValueError(f"{path}: built with {header['provider']!r}, not {provider.name!r}")
            rows = [json.loads(line) for line in fh if line.strip()]
        vectors = np.array([r["vector"] for r in rows], dtype=np.float64).reshape(len(rows), header["dimension"])
        return cls([r["id"] for r in rows], [r["text"] for r in rows], vectors, provider)


def build_index(store: GraphStore, provider: EmbeddingProvider, batch_size: int = 256) -> EntityIndex:
    """Embed every entity label and alias in `store`."""
    ids: list[EntityId] = []
    texts: list[str] = []
    for eid in sorted(store.entities):
        ent = store.entities[eid]
        for text in dict.fromkeys((ent.label, *ent.aliases)):
            ids.append(eid)
            texts.append(text)

    chunks = []
    for start in range(0, len(texts), batch_size):
        try:
            chunks.append(_unit_rows(provider.embed(texts[start:start + batch_size])))
        except Exception as exc:
            raise PartialBuildError(sorted(set(ids[start:])), exc) from exc
    vectors = np.concatenate(chunks) if chunks else np.zeros((0, provider.dimension))
    return EntityIndex(ids, texts, vectors, provider)


def search_entities(index: EntityIndex, query: str, n: int) -> list[SearchHit]:
    """Top-`n` entities by best inner product over their label and aliases."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if len(index) == 0:
        return []
    q = embed_text(index.provider, query)
    scores = index.vectors @ q
    best = np.maximum.reduceat(scores, index._starts)
    rounded = np.round(best, SCORE_DECIMALS)
    # groups are already in EntityId order, so a stable sort breaks ties by id
    order = np.argsort(-rounded, kind="stable")[:n]
    ends = np.append(index._starts[1:], len(index))
    hits = []
    for g in order:
        lo, hi = index._starts[g], ends[g]
        j = lo + int(np.argmax(scores[lo:hi]))
        hits.append(SearchHit(index.entity_ids[g], float(best[g]), index.texts[j]))
    return hits
