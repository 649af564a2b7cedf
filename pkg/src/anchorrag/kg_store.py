"""Knowledge-graph storage: an immutable triple set with one-hop access.

Two backends share one query surface (``relations_of``, ``neighbors_via``,
``label``, ``has_triple``):

* :class:`GraphStore`, an in-memory index built from TSV files.
* :class:`SparqlStore`, a thin SPARQL 1.1 protocol client for a remote
  endpoint holding the same graph.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, NamedTuple, Protocol, Sequence

import httpx

log = logging.getLogger(__name__)

EntityId = str
Relation = str

DEFAULT_SCHEMA_RULES: tuple[str, ...] = (
    "type.*",
    "common.*",
    "kg.*",
    "freebase.*",
    "sameAs",
)


class Direction(str, enum.Enum):
    OUTGOING = "out"
    INCOMING = "in"


class RelationEdge(NamedTuple):
    """A relation seen from one entity: ``OUTGOING`` when that entity is the head."""

    relation: Relation
    direction: Direction


class Triple(NamedTuple):
    head: EntityId
    relation: Relation
    tail: EntityId


@dataclass(frozen=True)
class Entity:
    id: EntityId
    label: str
    aliases: tuple[str, ...] = ()


class GraphLoadError(ValueError):
    pass


class KnowledgeGraph(Protocol):
    """Query surface consumed by the predictor and retriever agents."""

    def relations_of(self, entity: EntityId) -> list[RelationEdge]: ...

    def neighbors_via(self, entity: EntityId, edge: RelationEdge) -> list[EntityId]: ...

    def label(self, entity: EntityId) -> str: ...

    def has_triple(self, triple: Triple) -> bool: ...


def is_schema_relation(relation: Relation, rules: Sequence[str] = DEFAULT_SCHEMA_RULES) -> bool:
    """True if `relation` matches a rule.

    Rules ending in ``*`` are prefixes (``"common.*"`` matches
    ``"common.topic.alias"``); any other rule must match exactly.
    """
    for rule in rules:
        if rule.endswith("*"):
            if relation.startswith(rule[:-1]):
                return True
        elif relation == rule:
            return True
    return False


@dataclass(frozen=True)
class GraphStore:
    triples: frozenset[Triple]
    entities: Mapping[EntityId, Entity]
    _out: Mapping[EntityId, Mapping[Relation, tuple[EntityId, ...]]] = field(repr=False)
    _in: Mapping[EntityId, Mapping[Relation, tuple[EntityId, ...]]] = field(repr=False)
    duplicate_labels: int = 0

    @classmethod
    def from_triples(
        cls,
        triples: Iterable[Triple | tuple[str, str, str]],
        entities: Mapping[EntityId, Entity] | None = None,
        duplicate_labels: int = 0,
    ) -> "GraphStore":
        triple_set = frozenset(Triple(*t) for t in triples)
        out: dict[EntityId, dict[Relation, set[EntityId]]] = {}
        inc: dict[EntityId, dict[Relation, set[EntityId]]] = {}
        for h, r, t in triple_set:
            out.setdefault(h, {}).setdefault(r, set()).add(t)
            inc.setdefault(t, {}).setdefault(r, set()).add(h)

        ents: dict[EntityId, Entity] = {}
        known = dict(entities or {})
        for eid in sorted(set(out) | set(inc)):
            ents[eid] = known.get(eid) or Entity(eid, eid)

        def freeze(adj):
            return MappingProxyType(
                {e: MappingProxyType({r: tuple(sorted(v)) for r, v in rels.items()}) for e, rels in adj.items()}
            )

        return cls(triple_set, MappingProxyType(ents), freeze(out), freeze(inc), duplicate_labels)

    def __len__(self) -> int:
        return len(self.triples)

    def relations_of(self, entity: EntityId) -> list[RelationEdge]:
        edges = [RelationEdge(r, Direction.OUTGOING) for r in self._out.get(entity, {})]
        edges += [RelationEdge(r, Direction.INCOMING) for r in self._in.get(entity, {})]
        # OUTGOING sorts before INCOMING at equal relation names
        return sorted(edges, key=lambda e: (e.relation, e.direction is Direction.INCOMING))

    def neighbors_via(self, entity: EntityId, edge: RelationEdge) -> list[EntityId]:
        adj = self._out if edge.direction is Direction.OUTGOING else self._in
        return list(adj.get(entity, {}).get(edge.relation, ()))

    def label(self, entity: EntityId) -> str:
        ent = self.entities.get(entity)
        return ent.label if ent else entity

    def has_triple(self, triple: Triple) -> bool:
        return Triple(*triple) in self.triples


def _read_labels(path: Path) -> tuple[dict[EntityId, Entity], int]:
    labels: dict[EntityId, Entity] = {}
    duplicates = 0
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) < 2 or not parts[0] or not parts[1].strip():
                raise GraphLoadError(f"{path}:{lineno}: expected id<TAB>label[<TAB>aliases]")
            aliases: list[str] = []
            if len(parts) > 2:
                for a in parts[2].split("|"):
                    a = a.strip()
                    if a and a not in aliases:
                        aliases.append(a)
            if parts[0] in labels:
                duplicates += 1
            labels[parts[0]] = Entity(parts[0], parts[1].strip(), tuple(aliases))
    if duplicates:
        log.warning("%s: %d duplicate label ids (last one wins)", path, duplicates)
    return labels, duplicates


def load_graph(triples_path: str | Path, labels_path: str | Path | None = None) -> GraphStore:
    """Load a ``head<TAB>relation<TAB>tail`` file and an optional labels file.

    Blank lines are skipped and repeated lines collapse into one triple.
    Entities missing from the labels file are labelled with their id. Labels
    for ids that never occur in a triple are ignored.
    """
    triples_path = Path(triples_path)
    triples = []
    with triples_path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not all(p.strip() for p in parts):
                raise GraphLoadError(f"{triples_path}:{lineno}: malformed triple line {line!r}")
            triples.append(Triple(*(p.strip() for p in parts)))

    labels: dict[EntityId, Entity] = {}
    duplicates = 0
    if labels_path is not None:
        labels, duplicates = _read_labels(Path(labels_path))
    return GraphStore.from_triples(triples, labels, duplicates)


FREEBASE_NS = "http://rdf.freebase.com/ns/"


class SparqlStore:
    """Remote graph behind a SPARQL 1.1 endpoint (e.g. Virtuoso loaded with Freebase).

    Entity and relation ids are joined onto `namespace` to form IRIs, so
    ``m.0d05w3`` becomes ``<http://rdf.freebase.com/ns/m.0d05w3>``.
    """

    def __init__(
        self,
        endpoint: str,
        namespace: str = FREEBASE_NS,
        label_relation: str = "type.object.name",
        client: httpx.Client | None = None,
        timeout: float = 30.0,
    ):
        self.endpoint = endpoint
        self.namespace = namespace
        self.label_relation = label_relation
        self._client = client or httpx.Client(timeout=timeout)
        self._labels: dict[EntityId, str] = {}

    def _iri(self, local: str) -> str:
        return f"<{self.namespace}{local}>"

    def _local(self, iri: str) -> str:
        return iri[len(self.namespace):] if iri.startswith(self.namespace) else iri

    def select(self, query: str) -> list[dict[str, str]]:
        resp = self._client.post(
            self.endpoint,
            data={"query": query},
            headers={"Accept": "application/sparql-results+json"},
        )
        resp.raise_for_status()
        rows = resp.json()["results"]["bindings"]
        return [{k: v["value"] for k, v in row.items()} for row in rows]

    def relations_of(self, entity: EntityId) -> list[RelationEdge]:
        e = self._iri(entity)
        out = self.select(f"SELECT DISTINCT ?r WHERE {{ {e} ?r ?x . }}")
        inc = self.select(f"SELECT DISTINCT ?r WHERE {{ ?x ?r {e} . }}")
        edges = {RelationEdge(self._local(row["r"]), Direction.OUTGOING) for row in out}
        edges |= {RelationEdge(self._local(row["r"]), Direction.INCOMING) for row in inc}
        return sorted(edges, key=lambda e: (e.relation, e.direction is Direction.INCOMING))

    def neighbors_via(self, entity: EntityId, edge: RelationEdge) -> list[EntityId]:
        e, r = self._iri(entity), self._iri(edge.relation)
        if edge.direction is Direction.OUTGOING:
            q = f"SELECT DISTINCT ?x WHERE {{ {e} {r} ?x . FILTER(isIRI(?x)) }}"
        else:
            q = f"SELECT DISTINCT ?x WHERE {{ ?x {r} {e} . FILTER(isIRI(?x)) }}"
        return sorted({self._local(row["x"]) for row in self.select(q)})

    def label(self, entity: EntityId) -> str:
        if entity not in self._labels:
            q = (
                f"SELECT ?name WHERE {{ {self._iri(entity)} {self._iri(self.label_relation)} ?name . "
                f'FILTER(!isLiteral(?name) || lang(?name) = "" || langMatches(lang(?name), "en")) }} LIMIT 1'
            )
            rows = self.select(q)
            self._labels[entity] = rows[0]["name"] if rows else entity
        return self._labels[entity]

    def has_triple(self, triple: Triple) -> bool:
        h, r, t = (self._iri(x) for x in triple)
        resp = self._client.post(
            self.endpoint,
            data={"query": f"ASK {{ {h} {r} {t} . }}"},
            headers={"Accept": "application/sparql-results+json"},
        )
        resp.raise_for_status()
        return bool(resp.json()["boolean"])
