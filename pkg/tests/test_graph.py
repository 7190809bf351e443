"""Graph construction and query tests against brute-force oracles."""

import sys
from pathlib import Path

import numpy as np
import pytest

from ontonorm.graph import (
    CyclicIsA,
    RelationalGraph,
    build_graph,
    depth,
    load_dataset_tsvs,
    shortest_distance,
    two_hop_paths,
)
from ontonorm.obo import normalize_dataset, parse_obo, write_dataset_tsvs

FIXTURE = Path(__file__).parent / "data" / "mini.obo"


def _entities(n):
    return [(f"E:{i}", f"entity {i}") for i in range(n)]


def _random_graph(rng, n, n_edges, relations=("is_a", "part_of")):
    """Random graph whose is_a edges only point from higher to lower index,
    which keeps the is_a subgraph acyclic by construction."""
    triples = []
    seen = set()
    while len(triples) < n_edges:
        a, b = int(rng.integers(n)), int(rng.integers(n))
        if a == b:
            continue
        rel = relations[int(rng.integers(len(relations)))]
        if rel == "is_a":
            a, b = max(a, b), min(a, b)
        key = (a, rel, b)
        if key in seen:
            continue
        seen.add(key)
        triples.append((f"E:{a}", rel, f"E:{b}"))
    return build_graph(_entities(n), [], triples)


def _floyd_warshall(graph: RelationalGraph) -> np.ndarray:
    n = len(graph)
    dist = np.full((n, n), np.inf)
    np.fill_diagonal(dist, 0.0)
    for t in graph.edges:
        dist[t.head, t.tail] = 1.0
        dist[t.tail, t.head] = 1.0
    for k in range(n):
        dist = np.minimum(dist, dist[:, k : k + 1] + dist[k : k + 1, :])
    return dist


def test_build_small_tree():
    g = build_graph(_entities(3), [], [("E:1", "is_a", "E:0"), ("E:2", "is_a", "E:0")])
    assert len(g.edges) == 2
    assert g.relations == {"is_a"}


def test_two_cycle_rejected():
    with pytest.raises(CyclicIsA) as exc:
        build_graph(_entities(2), [], [("E:0", "is_a", "E:1"), ("E:1", "is_a", "E:0")])
    assert len(exc.value.cycle) >= 3


def test_longer_cycle_reported():
    triples = [("E:0", "is_a", "E:1"), ("E:1", "is_a", "E:2"), ("E:2", "is_a", "E:0")]
    with pytest.raises(CyclicIsA):
        build_graph(_entities(3), [], triples)


def test_fixture_counts_match_tsv_line_counts(tmp_path):
    ds = normalize_dataset(parse_obo(FIXTURE.read_bytes()))
    write_dataset_tsvs(ds, tmp_path)
    entities, pairs, triples = load_dataset_tsvs(tmp_path)
    g = build_graph(entities, pairs, triples)
    assert len(g) == len((tmp_path / "entities.tsv").read_text().splitlines())
    assert len(g.pairs) == len((tmp_path / "pairs.tsv").read_text().splitlines())
    assert len(g.edges) == len((tmp_path / "triples.tsv").read_text().splitlines())


def test_self_distance_zero():
    g = build_graph(_entities(2), [], [])
    assert shortest_distance(g, 1, 1) == 0


def test_chain_distance():
    g = build_graph(_entities(3), [], [("E:1", "is_a", "E:0"), ("E:2", "is_a", "E:1")])
    assert shortest_distance(g, 0, 2) == 2


def test_unreachable_and_cap():
    g = build_graph(_entities(4), [], [("E:1", "is_a", "E:0"), ("E:2", "is_a", "E:1"), ("E:3", "is_a", "E:2")])
    assert shortest_distance(g, 0, 3, cap=2) is None
    g2 = build_graph(_entities(2), [], [])
    assert shortest_distance(g2, 0, 1) is None


def test_distances_match_floyd_warshall():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        g = _random_graph(rng, 50, 80)
        oracle = _floyd_warshall(g)
        for a in range(len(g)):
            for b in range(len(g)):
                got = shortest_distance(g, a, b, cap=60)
                want = None if np.isinf(oracle[a, b]) else int(oracle[a, b])
                assert got == want, f"seed {seed}: distance({a},{b})"


def test_distance_symmetry_and_triangle():
    rng = np.random.default_rng(99)
    g = _random_graph(rng, 40, 70)
    idx = rng.integers(0, 40, size=(60, 3))
    for a, b, c in idx:
        dab = shortest_distance(g, int(a), int(b), cap=50)
        dba = shortest_distance(g, int(b), int(a), cap=50)
        assert dab == dba
        dac = shortest_distance(g, int(a), int(c), cap=50)
        dcb = shortest_distance(g, int(c), int(b), cap=50)
        if dac is not None and dcb is not None and dab is not None:
            assert dab <= dac + dcb


def test_two_hop_single_composition():
    g = build_graph(_entities(3), [], [("E:0", "part_of", "E:1"), ("E:1", "is_a", "E:2")])
    assert two_hop_paths(g) == [(0, "part_of", 1, 2)]


def test_two_hop_empty_without_isa():
    g = build_graph(_entities(3), [], [("E:0", "part_of", "E:1"), ("E:1", "overlaps", "E:2")])
    assert two_hop_paths(g) == []


def test_two_hop_matches_nested_loop_join():
    rng = np.random.default_rng(5)
    g = _random_graph(rng, 30, 60)
    brute = set()
    for e1 in g.edges:
        for e2 in g.edges:
            if e2.relation == "is_a" and e1.tail == e2.head:
                brute.add((e1.head, e1.relation, e1.tail, e2.tail))
    assert set(two_hop_paths(g)) == brute
    # size identity: sum over edges of is_a out-degree of the tail
    isa_out = {}
    for t in g.edges:
        if t.relation == "is_a":
            isa_out[t.head] = isa_out.get(t.head, 0) + 1
    assert len(two_hop_paths(g)) == sum(isa_out.get(t.tail, 0) for t in g.edges)


def test_depth_root_and_chain():
    g = build_graph(_entities(3), [], [("E:1", "is_a", "E:0"), ("E:2", "is_a", "E:1")])
    assert depth(g, 0) == 0
    assert depth(g, 2) == 2


def _depth_oracle(graph: RelationalGraph, v: int, pick) -> int:
    parents = graph._isa_parents[v]
    if not parents:
        return 0
    return 1 + pick(_depth_oracle(graph, p, pick) for p in parents)


def test_depth_matches_recursive_oracle():
    rng = np.random.default_rng(17)
    g = _random_graph(rng, 40, 70)
    sys.setrecursionlimit(10000)
    for v in range(len(g)):
        assert depth(g, v) == _depth_oracle(g, v, max)
        assert depth(g, v, mode="shortest") == _depth_oracle(g, v, min)


def test_depth_monotone_along_isa_edges():
    rng = np.random.default_rng(23)
    g = _random_graph(rng, 40, 70)
    for t in g.edges:
        if t.relation == "is_a":
            assert depth(g, t.head) >= depth(g, t.tail) + 1


def test_to_json_round_trips_counts():
    import json

    ds = normalize_dataset(parse_obo(FIXTURE.read_bytes()))
    g = build_graph(ds.entities, ds.pairs, ds.triples)
    payload = json.loads(g.to_json())
    assert len(payload["nodes"]) == len(g)
    assert len(payload["edges"]) == len(g.edges)
