"""Statistics, distance-vs-similarity study, and string-baseline tests."""

import numpy as np
import pytest

from ontonorm.analysis import (
    dataset_stats,
    distance_similarity_correlation,
    string_baseline,
    text_similarity,
    token_edit_distance,
    write_correlation_csv,
)
from ontonorm.graph import build_graph
from ontonorm.splits import Fold, SplitSpec, Setting, make_few_shot_split


def test_stats_small_counts():
    g = build_graph(
        [("E:0", "a"), ("E:1", "b"), ("E:2", "c")],
        [("x", "E:0"), ("y", "E:1")],
        [("E:1", "is_a", "E:0"), ("E:2", "part_of", "E:0")],
    )
    stats = dataset_stats(g)
    assert (stats.n_entities, stats.n_pairs, stats.n_triples) == (3, 2, 2)
    assert stats.relation_histogram == {"is_a": 1, "part_of": 1}
    assert stats.synonyms_per_entity == {0: 1, 1: 2}
    assert stats.fraction_under_5_synonyms == 1.0


def test_stats_match_tsv_line_counts(tmp_path, toy_graph):
    from ontonorm.obo import NormalizedDataset, write_dataset_tsvs

    stats = dataset_stats(toy_graph)
    ds = NormalizedDataset(
        entities=[(e.id, e.phrase) for e in toy_graph.entities],
        pairs=[(s, toy_graph.entities[e].id) for e, s in toy_graph.pairs],
        triples=[
            (toy_graph.entities[t.head].id, t.relation, toy_graph.entities[t.tail].id)
            for t in toy_graph.edges
        ],
    )
    write_dataset_tsvs(ds, tmp_path)
    assert stats.n_entities == len((tmp_path / "entities.tsv").read_text().splitlines())
    assert stats.n_pairs == len((tmp_path / "pairs.tsv").read_text().splitlines())
    assert stats.n_triples == len((tmp_path / "triples.tsv").read_text().splitlines())


def test_stats_invariant_to_reindexing(toy_graph):
    order = list(range(len(toy_graph)))[::-1]
    remapped = build_graph(
        [(toy_graph.entities[i].id, toy_graph.entities[i].phrase) for i in order],
        [(s, toy_graph.entities[e].id) for e, s in toy_graph.pairs],
        [
            (toy_graph.entities[t.head].id, t.relation, toy_graph.entities[t.tail].id)
            for t in toy_graph.edges
        ],
    )
    a, b = dataset_stats(toy_graph), dataset_stats(remapped)
    assert (a.n_entities, a.n_pairs, a.n_triples) == (b.n_entities, b.n_pairs, b.n_triples)
    assert a.relation_histogram == b.relation_histogram
    assert a.synonyms_per_entity == b.synonyms_per_entity


def test_edit_distance_basics():
    assert token_edit_distance(["a", "b"], ["a", "b"]) == 0
    assert token_edit_distance(["a", "b"], ["a", "c"]) == 1
    assert token_edit_distance([], ["a"]) == 1
    assert token_edit_distance(["x", "y", "z"], ["y"]) == 2


def test_similarity_identity_and_disjoint():
    assert text_similarity("heart process", "heart process") == 1.0
    assert text_similarity("heart process", "Heart Process") == 1.0  # case-folded tokens
    assert text_similarity("alpha beta", "gamma delta") == 0.0


def test_similarity_symmetric_bounded():
    rng = np.random.default_rng(0)
    words = ["heart", "blood", "process", "regulation", "of", "cell"]
    for _ in range(50):
        a = " ".join(rng.choice(words, size=rng.integers(1, 5)))
        b = " ".join(rng.choice(words, size=rng.integers(1, 5)))
        s_ab, s_ba = text_similarity(a, b), text_similarity(b, a)
        assert s_ab == s_ba
        assert 0.0 <= s_ab <= 1.0
        assert (s_ab == 1.0) == (a.lower().split() == b.lower().split())


def _suffix_tree_graph(depth=4, branching=2):
    """Children append one token to the parent phrase, so text similarity
    provably decreases with graph distance."""
    entities = [("N:0", "core")]
    triples = []
    frontier = [("N:0", "core")]
    counter = 1
    for level in range(1, depth):
        nxt = []
        for parent_id, parent_phrase in frontier:
            for b in range(branching):
                nid = f"N:{counter}"
                counter += 1
                phrase = f"{parent_phrase} w{level}{b}"
                entities.append((nid, phrase))
                triples.append((nid, "is_a", parent_id))
                nxt.append((nid, phrase))
        frontier = nxt
    return build_graph(entities, [], triples)


def test_similarity_decreases_with_distance_on_suffix_tree():
    g = _suffix_tree_graph(depth=5, branching=2)
    buckets = distance_similarity_correlation(g, max_distance=3, sample_size=300, seed=1)
    means = [b.mean for b in buckets if b.n > 0]
    assert len(means) == 3
    assert means[0] > means[1] > means[2]


def test_correlation_reports_empty_buckets():
    g = build_graph([("E:0", "a"), ("E:1", "b")], [], [("E:1", "is_a", "E:0")])
    buckets = distance_similarity_correlation(g, max_distance=3, sample_size=10, seed=0)
    assert buckets[0].n > 0
    assert buckets[2].n == 0 and np.isnan(buckets[2].mean)


def test_correlation_csv_format(tmp_path):
    g = _suffix_tree_graph()
    buckets = distance_similarity_correlation(g, max_distance=2, sample_size=50, seed=0)
    path = tmp_path / "corr.csv"
    write_correlation_csv(buckets, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "distance,mean,p25,p75,n"
    assert len(lines) == 3


def test_string_baseline_exact_name_ranks_first(toy_graph):
    pairs = list(toy_graph.pairs)
    g = build_graph(
        [(e.id, e.phrase) for e in toy_graph.entities],
        [(s, toy_graph.entities[e].id) for e, s in pairs] + [("heart contraction", "B:2")],
        [
            (toy_graph.entities[t.head].id, t.relation, toy_graph.entities[t.tail].id)
            for t in toy_graph.edges
        ],
    )
    folds = [Fold.TRAIN] * len(g.pairs)
    folds[-1] = Fold.TEST  # the query identical to its entity name
    split = SplitSpec(Setting.FEW_SHOT, 0, folds)
    report = string_baseline(g, split)
    assert report.ranks == [1]
    assert report.acc[1] == 1.0


def test_string_baseline_monotone_and_matches_oracle(toy_graph):
    from ontonorm.analysis import token_edit_distance
    from ontonorm.encoder import tokenize

    split = make_few_shot_split(toy_graph.pairs, seed=0)
    report = string_baseline(toy_graph, split)
    assert report.acc[1] <= report.acc[10]

    queries = split.pairs_in(toy_graph, Fold.TEST)
    expected = []
    for gold, syn in queries:
        st = tokenize(syn)
        sims = []
        for e in toy_graph.entities:
            et = tokenize(e.phrase)
            sims.append(1.0 - token_edit_distance(st, et) / max(len(st), len(et)))
        order = sorted(range(len(sims)), key=lambda i: (-sims[i], i))
        expected.append(order.index(gold) + 1)
    assert report.ranks == expected
