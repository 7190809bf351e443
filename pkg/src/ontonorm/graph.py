"""The relational graph over ontology entities and its query operations.

Entities are indexed in input order. The subgraph of "is_a" edges must be
acyclic; this is verified at construction. All queries are read-only, so
a built graph is safe to share across threads.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

__all__ = [
    "CyclicIsA",
    "EntityNode",
    "RelationalGraph",
    "Triple",
    "build_graph",
    "depth",
    "load_dataset_tsvs",
    "shortest_distance",
    "two_hop_paths",
]

DEFAULT_DISTANCE_CAP = 10


class CyclicIsA(ValueError):
    """The is_a subgraph contains a cycle."""

    def __init__(self, cycle: list[str]):
        self.cycle = cycle
        super().__init__("is_a cycle: " + " -> ".join(cycle))


@dataclass(frozen=True)
class EntityNode:
    id: str
    phrase: str

    def __post_init__(self):
        if not self.phrase:
            raise ValueError(f"entity {self.id} has an empty phrase")


@dataclass(frozen=True)
class Triple:
    head: int
    relation: str
    tail: int


@dataclass
class RelationalGraph:
    entities: list[EntityNode]
    relations: set[str]
    edges: list[Triple]
    #: flat (entity index, synonym) list in input order; the unit of
    #: train/valid/test assignment
    pairs: list[tuple[int, str]]
    synonyms: dict[int, list[str]] = field(default_factory=dict)
    id_to_index: dict[str, int] = field(default_factory=dict)
    _undirected: list[list[int]] = field(default_factory=list, repr=False)
    _isa_parents: list[list[int]] = field(default_factory=list, repr=False)
    _depth_cache: dict[tuple[int, str], int] = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.entities)

    def phrase(self, idx: int) -> str:
        return self.entities[idx].phrase

    def to_json(self) -> str:
        return json.dumps(
            {
                "nodes": [{"id": e.id, "phrase": e.phrase} for e in self.entities],
                "edges": [[t.head, t.relation, t.tail] for t in self.edges],
                "synonyms": {str(k): v for k, v in sorted(self.synonyms.items())},
            },
            ensure_ascii=False,
        )


def build_graph(
    entities: Sequence[tuple[str, str]],
    pairs: Sequence[tuple[str, str]],
    triples: Sequence[tuple[str, str, str]],
) -> RelationalGraph:
    """Index the normalized dataset and verify the is_a DAG property.

    ``pairs`` rows are (synonym, entity id); ``triples`` rows are
    (head id, relation, tail id) with ids that must resolve.
    """
    nodes = [EntityNode(eid, phrase) for eid, phrase in entities]
    id_to_index = {e.id: i for i, e in enumerate(nodes)}
    if len(id_to_index) != len(nodes):
        raise ValueError("duplicate entity ids")

    edge_list: list[Triple] = []
    relations: set[str] = set()
    for head_id, rel, tail_id in triples:
        if head_id not in id_to_index or tail_id not in id_to_index:
            raise ValueError(f"triple ({head_id}, {rel}, {tail_id}) references unknown entity")
        edge_list.append(Triple(id_to_index[head_id], rel, id_to_index[tail_id]))
        relations.add(rel)

    pair_list: list[tuple[int, str]] = []
    syn_index: dict[int, list[str]] = {}
    for syn, eid in pairs:
        if eid not in id_to_index:
            raise ValueError(f"pair ({syn!r}, {eid}) references unknown entity")
        idx = id_to_index[eid]
        pair_list.append((idx, syn))
        syn_index.setdefault(idx, []).append(syn)

    n = len(nodes)
    undirected: list[list[int]] = [[] for _ in range(n)]
    isa_parents: list[list[int]] = [[] for _ in range(n)]
    for t in edge_list:
        undirected[t.head].append(t.tail)
        undirected[t.tail].append(t.head)
        if t.relation == "is_a":
            isa_parents[t.head].append(t.tail)

    _check_isa_acyclic(nodes, isa_parents)

    return RelationalGraph(
        entities=nodes,
        relations=relations,
        edges=edge_list,
        pairs=pair_list,
        synonyms=syn_index,
        id_to_index=id_to_index,
        _undirected=undirected,
        _isa_parents=isa_parents,
    )


def _check_isa_acyclic(nodes: list[EntityNode], isa_parents: list[list[int]]) -> None:
    n = len(nodes)
    state = [0] * n  # 0 unvisited, 1 on stack, 2 done
    for start in range(n):
        if state[start] != 0:
            continue
        stack: list[tuple[int, int]] = [(start, 0)]
        trail = [start]
        state[start] = 1
        while stack:
            node, ptr = stack[-1]
            if ptr < len(isa_parents[node]):
                stack[-1] = (node, ptr + 1)
                nxt = isa_parents[node][ptr]
                if state[nxt] == 1:
                    cycle_ids = [nodes[i].id for i in trail[trail.index(nxt):]] + [nodes[nxt].id]
                    raise CyclicIsA(cycle_ids)
                if state[nxt] == 0:
                    state[nxt] = 1
                    stack.append((nxt, 0))
                    trail.append(nxt)
            else:
                state[node] = 2
                stack.pop()
                trail.pop()


def shortest_distance(
    graph: RelationalGraph,
    a: int,
    b: int,
    cap: int = DEFAULT_DISTANCE_CAP,
) -> Optional[int]:
    """Undirected, relation-blind BFS hop count; None beyond cap or unreachable."""
    if not (0 <= a < len(graph) and 0 <= b < len(graph)):
        raise IndexError("entity index out of range")
    if a == b:
        return 0
    seen = {a}
    frontier = deque([(a, 0)])
    while frontier:
        node, dist = frontier.popleft()
        if dist >= cap:
            continue
        for nxt in graph._undirected[node]:
            if nxt == b:
                return dist + 1
            if nxt not in seen:
                seen.add(nxt)
                frontier.append((nxt, dist + 1))
    return None


def two_hop_paths(graph: RelationalGraph) -> list[tuple[int, str, int, int]]:
    """All (v_i, r, v_j, v_k) where (v_i, r, v_j) is any edge and
    (v_j, is_a, v_k) is an is_a edge; the second hop is fixed to is_a."""
    out: list[tuple[int, str, int, int]] = []
    for t in graph.edges:
        for k in graph._isa_parents[t.tail]:
            out.append((t.head, t.relation, t.tail, k))
    return out


def depth(graph: RelationalGraph, v: int, mode: str = "longest") -> int:
    """is_a path length from v to a root (no outgoing is_a edge).

    ``longest`` (default) is stable when merged subtrees share a node;
    ``shortest`` is exposed for comparison.
    """
    if mode not in ("longest", "shortest"):
        raise ValueError("mode must be 'longest' or 'shortest'")
    cache = graph._depth_cache
    pick = max if mode == "longest" else min

    # iterative postorder so deep chains don't hit the recursion limit
    order: list[int] = []
    visiting: list[int] = [v]
    needed: set[int] = set()
    while visiting:
        node = visiting.pop()
        if (node, mode) in cache or node in needed:
            continue
        needed.add(node)
        order.append(node)
        visiting.extend(graph._isa_parents[node])
    for node in reversed(order):
        parents = graph._isa_parents[node]
        if not parents:
            cache[(node, mode)] = 0
        else:
            cache[(node, mode)] = 1 + pick(cache[(p, mode)] for p in parents)
    return cache[(v, mode)]


def load_dataset_tsvs(directory) -> tuple[list[tuple[str, str]], list[tuple[str, str]], list[tuple[str, str, str]]]:
    """Read the entities/pairs/triples TSVs emitted by the ingest step."""
    directory = Path(directory)

    def rows(name: str, width: int):
        out = []
        path = directory / name
        with open(path, encoding="utf-8") as fh:
            for ln, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                cols = line.split("\t")
                if len(cols) != width:
                    raise ValueError(f"{path}:{ln}: expected {width} columns, got {len(cols)}")
                out.append(tuple(cols))
        return out

    entities = rows("entities.tsv", 2)
    pairs = rows("pairs.tsv", 2)
    triples = rows("triples.tsv", 3)
    return entities, pairs, triples
