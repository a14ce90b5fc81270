"""Knowledge graph construction, subgraph/path sampling, obfuscation planning.

Entity names are canonicalized on entry: trimmed, alias-mapped, and merged
case-insensitively onto the first spelling seen, so "Bushido" and "bushido"
become one node. Edges are kept as stored (directed triples) but all
traversal is undirected; emitted paths record nodes in walk order with the
stored relation names, so rendering a sampled path may read against the
stored edge direction, as chains in the wild do.

All sampling is driven by an explicit rng seed and iterates insertion-ordered
structures, so identical inputs give identical paths.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Collection, Iterable, Sequence

from .errors import AliasCycle, NoPathFound, UnknownSeed
from .model import ReasoningPath, Triple


class PathStrategy(Enum):
    RANDOM_WALK = "random_walk"
    BFS = "bfs"


class ObfuscationCategory(Enum):
    TEMPORAL = "temporal"
    LOCATION = "location"
    INSTITUTIONAL = "institutional"
    GENERIC = "generic"


@dataclass
class ObfuscationTarget:
    node: str
    category: ObfuscationCategory
    rewrite: str | None = None


@dataclass
class ObfuscationPlan:
    targets: list[ObfuscationTarget] = field(default_factory=list)


def resolve_aliases(alias_map: dict | None) -> dict[str, str]:
    """Flatten alias chains to final targets; a cycle raises AliasCycle."""
    if not alias_map:
        return {}
    cleaned = {k.strip(): v.strip() for k, v in alias_map.items()}
    resolved = {}
    for start in cleaned:
        seen = [start]
        target = cleaned[start]
        while target in cleaned:
            if target in seen:
                raise AliasCycle(f"alias cycle: {' -> '.join(seen + [target])}")
            seen.append(target)
            target = cleaned[target]
        resolved[start] = target
    return resolved


class _Canonicalizer:
    def __init__(self, alias_map: dict | None = None):
        self._alias = resolve_aliases(alias_map)
        self._first_seen: dict[str, str] = {}

    def canon(self, name: str) -> str:
        name = name.strip()
        name = self._alias.get(name, name)
        return self._first_seen.setdefault(name.casefold(), name)


class KnowledgeGraph:
    """Entities plus exact-deduplicated directed triples, undirected adjacency."""

    def __init__(self):
        self._nodes: dict[str, None] = {}
        self.edges: list[Triple] = []
        self._edge_keys: set[tuple[str, str, str, str]] = set()
        self._incident: dict[str, list[int]] = {}
        self._doc_index: dict[str, list[int]] = {}

    def add_node(self, name: str):
        if name not in self._nodes:
            self._nodes[name] = None
            self._incident[name] = []

    def add_edge(self, triple: Triple) -> bool:
        """Insert unless an identical (s, r, o, doc) tuple already exists."""
        key = (triple.subject, triple.relation, triple.object, triple.doc_id)
        if key in self._edge_keys:
            return False
        self._edge_keys.add(key)
        idx = len(self.edges)
        self.edges.append(triple)
        self.add_node(triple.subject)
        self.add_node(triple.object)
        self._incident[triple.subject].append(idx)
        if triple.object != triple.subject:
            self._incident[triple.object].append(idx)
        self._doc_index.setdefault(triple.doc_id, []).append(idx)
        return True

    def nodes(self) -> list[str]:
        return list(self._nodes)

    def doc_ids(self) -> list[str]:
        return list(self._doc_index)

    def __contains__(self, name: str) -> bool:
        return name in self._nodes

    def __len__(self) -> int:
        return len(self._nodes)

    def neighbors(self, name: str) -> list[tuple[str, str, str]]:
        """(other_node, relation, doc_id) over incident edges, either direction."""
        out = []
        for idx in self._incident.get(name, ()):
            edge = self.edges[idx]
            other = edge.object if edge.subject == name else edge.subject
            out.append((other, edge.relation, edge.doc_id))
        return out

    def has_edge(self, a: str, relation: str, b: str, undirected: bool = True) -> bool:
        for idx in self._incident.get(a, ()):
            edge = self.edges[idx]
            if edge.relation != relation:
                continue
            if edge.subject == a and edge.object == b:
                return True
            if undirected and edge.subject == b and edge.object == a:
                return True
        return False

    def __eq__(self, other) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return set(self._nodes) == set(other._nodes) and self._edge_keys == other._edge_keys

    def to_dict(self) -> dict:
        return {
            "entities": self.nodes(),
            "edges": [
                {"subject": e.subject, "relation": e.relation, "object": e.object, "doc_id": e.doc_id}
                for e in self.edges
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "KnowledgeGraph":
        graph = cls()
        for name in data.get("entities", []):
            graph.add_node(name)
        for edge in data.get("edges", []):
            graph.add_edge(Triple(edge["subject"], edge["relation"], edge["object"], edge.get("doc_id", "")))
        return graph


def build_graph(triples: Iterable[Triple], alias_map: dict | None = None) -> KnowledgeGraph:
    """Canonicalize entity names and assemble the deduplicated graph."""
    canon = _Canonicalizer(alias_map)
    graph = KnowledgeGraph()
    for t in triples:
        graph.add_edge(
            Triple(canon.canon(t.subject), t.relation.strip(), canon.canon(t.object), t.doc_id.strip())
        )
    return graph


def aggregate_domain(graphs: Sequence[KnowledgeGraph], alias_map: dict | None = None) -> KnowledgeGraph:
    """Union per-document graphs under one alias map into a domain graph."""

    def all_edges():
        for g in graphs:
            yield from g.edges

    return build_graph(all_edges(), alias_map)


def _relation_predicate(relation_filter) -> Callable[[str], bool]:
    if relation_filter is None:
        return lambda rel: True
    if callable(relation_filter):
        return relation_filter
    allowed = set(relation_filter)
    return lambda rel: rel in allowed


def sample_subgraph(
    graph: KnowledgeGraph,
    seeds: Sequence[str],
    radius: int,
    relation_filter: Callable[[str], bool] | Collection[str] | None = None,
) -> KnowledgeGraph:
    """Induced subgraph within ``radius`` undirected hops of any seed.

    Traversal and kept edges both honor relation_filter, so the neighborhood
    is the relation-relevant one. Seeds absent from the graph raise
    UnknownSeed.
    """
    if radius < 0:
        raise ValueError("radius must be non-negative")
    keep = _relation_predicate(relation_filter)
    for seed in seeds:
        if seed not in graph:
            raise UnknownSeed(f"seed entity not in graph: {seed!r}")
    distance = {seed: 0 for seed in seeds}
    frontier = list(dict.fromkeys(seeds))
    while frontier:
        nxt = []
        for node in frontier:
            if distance[node] == radius:
                continue
            for other, rel, _ in graph.neighbors(node):
                if keep(rel) and other not in distance:
                    distance[other] = distance[node] + 1
                    nxt.append(other)
        frontier = nxt
    sub = KnowledgeGraph()
    for name in graph.nodes():
        if name in distance:
            sub.add_node(name)
    for edge in graph.edges:
        if edge.subject in distance and edge.object in distance and keep(edge.relation):
            sub.add_edge(edge)
    return sub


def default_min_docs(hops: int) -> int:
    return max(2, math.ceil(hops / 3))


def _walk_attempt(graph: KnowledgeGraph, start: str, hops: int, rng: random.Random):
    nodes = [start]
    relations: list[str] = []
    docs: list[str] = []
    visited = {start}
    current = start
    for _ in range(hops):
        options = [(o, r, d) for o, r, d in graph.neighbors(current) if o not in visited]
        if not options:
            return None
        other, rel, doc = rng.choice(options)
        nodes.append(other)
        relations.append(rel)
        docs.append(doc)
        visited.add(other)
        current = other
    return nodes, relations, docs


def _enumerate_paths(graph, start, hops, min_docs, budget: list[int], cap: int):
    """DFS over simple paths of exactly ``hops`` edges from ``start``.

    budget is a one-element list of remaining node expansions, shared across
    seeds; cap bounds how many qualifying paths are collected.
    """
    found: list[tuple[list[str], list[str], list[str]]] = []

    def recurse(node, nodes, relations, docs, visited):
        if len(found) >= cap or budget[0] <= 0:
            return
        budget[0] -= 1
        if len(relations) == hops:
            if len(set(docs)) >= min_docs:
                found.append((list(nodes), list(relations), list(docs)))
            return
        for other, rel, doc in graph.neighbors(node):
            if other in visited:
                continue
            nodes.append(other)
            relations.append(rel)
            docs.append(doc)
            visited.add(other)
            recurse(other, nodes, relations, docs, visited)
            nodes.pop()
            relations.pop()
            docs.pop()
            visited.remove(other)
            if len(found) >= cap or budget[0] <= 0:
                return

    recurse(start, [start], [], [], {start})
    return found


def sample_path(
    graph: KnowledgeGraph,
    strategy: PathStrategy = PathStrategy.RANDOM_WALK,
    hops: int = 2,
    min_docs: int | None = None,
    rng_seed: int = 0,
    max_attempts: int = 10000,
    hop_bounds: tuple[int, int] = (2, 30),
) -> ReasoningPath:
    """Sample a simple path of exactly ``hops`` edges spanning >= min_docs docs.

    min_docs defaults to max(2, ceil(hops / 3)). Random-walk attempts restart
    on dead ends; the BFS strategy enumerates simple paths from random seeds
    (max_attempts acts as the node-expansion budget) and picks uniformly among
    the qualifying paths it gathered. Identical arguments yield the identical
    path; exhausting the budget raises NoPathFound.
    """
    lo, hi = hop_bounds
    if not lo <= hops <= hi:
        raise ValueError(f"hops={hops} outside configured bounds [{lo}, {hi}]")
    if min_docs is None:
        min_docs = default_min_docs(hops)
    if min_docs < 1:
        raise ValueError("min_docs must be at least 1")
    nodes = graph.nodes()
    if not nodes:
        raise NoPathFound("graph has no entities")
    rng = random.Random(rng_seed)
    if strategy == PathStrategy.RANDOM_WALK:
        for _ in range(max_attempts):
            start = rng.choice(nodes)
            result = _walk_attempt(graph, start, hops, rng)
            if result is None:
                continue
            walked, relations, docs = result
            if len(set(docs)) >= min_docs:
                return ReasoningPath(walked, relations, docs)
        raise NoPathFound(f"no qualifying path after {max_attempts} random-walk attempts")
    budget = [max_attempts]
    while budget[0] > 0:
        start = rng.choice(nodes)
        found = _enumerate_paths(graph, start, hops, min_docs, budget, cap=128)
        if found:
            walked, relations, docs = rng.choice(found)
            return ReasoningPath(walked, relations, docs)
    raise NoPathFound(f"no qualifying path within a {max_attempts}-expansion budget")


def plan_obfuscations(
    path: ReasoningPath,
    categories: dict[str, ObfuscationCategory] | None = None,
    density: float = 0.3,
    rng_seed: int = 0,
) -> ObfuscationPlan:
    """Pick ceil(density * (hops + 1)) path nodes to describe indirectly.

    The two endpoints are never both selected; when the draw would take both,
    the terminal node is dropped so the answer anchor stays literal. Nodes
    are tagged with the caller's category map, defaulting to Generic.
    """
    if not 0.0 <= density <= 1.0:
        raise ValueError("density must lie in [0, 1]")
    n = len(path.nodes)
    target_count = math.ceil(density * (path.hops + 1))
    rng = random.Random(rng_seed)
    order = list(range(n))
    rng.shuffle(order)
    chosen = order[:target_count]
    if 0 in chosen and n - 1 in chosen:
        chosen.remove(n - 1)
        for pos in order[target_count:]:
            if pos != n - 1:
                chosen.append(pos)
                break
    categories = categories or {}
    targets = [
        ObfuscationTarget(path.nodes[pos], categories.get(path.nodes[pos], ObfuscationCategory.GENERIC))
        for pos in sorted(chosen)
    ]
    return ObfuscationPlan(targets=targets)
