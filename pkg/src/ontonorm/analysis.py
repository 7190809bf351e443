"""Dataset statistics, the graph-distance vs text-similarity study, and a
no-learning string baseline.

Textual similarity is one minus the token-level Levenshtein distance
normalized by the longer phrase, a self-contained stand-in for a learned
sentence similarity. Pairs for the distance study are sampled per
distance bucket by BFS rings around random source nodes.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .encoder import tokenize
from .graph import RelationalGraph
from .splits import EvalReport, Fold, SplitSpec, _ranks_from_scores, report_from_ranks

logger = logging.getLogger(__name__)


@dataclass
class DatasetStats:
    n_entities: int
    n_pairs: int
    n_triples: int
    relation_histogram: dict[str, int]
    synonyms_per_entity: dict[int, int]  # synonym count -> number of entities
    fraction_under_5_synonyms: float


def dataset_stats(graph: RelationalGraph) -> DatasetStats:
    relation_histogram: dict[str, int] = {}
    for t in graph.edges:
        relation_histogram[t.relation] = relation_histogram.get(t.relation, 0) + 1
    counts = [len(graph.synonyms.get(i, [])) for i in range(len(graph))]
    distribution: dict[int, int] = {}
    for c in counts:
        distribution[c] = distribution.get(c, 0) + 1
    under5 = sum(1 for c in counts if c < 5) / len(counts) if counts else 0.0
    return DatasetStats(
        n_entities=len(graph),
        n_pairs=len(graph.pairs),
        n_triples=len(graph.edges),
        relation_histogram=dict(sorted(relation_histogram.items())),
        synonyms_per_entity=dict(sorted(distribution.items())),
        fraction_under_5_synonyms=under5,
    )


def token_edit_distance(a: Sequence[str], b: Sequence[str]) -> int:
    """Levenshtein distance over token sequences."""
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, tok_a in enumerate(a, start=1):
        current = [i]
        for j, tok_b in enumerate(b, start=1):
            cost = 0 if tok_a == tok_b else 1
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + cost))
        previous = current
    return previous[len(b)]


def text_similarity(phrase_a: str, phrase_b: str) -> float:
    """1 - normalized token edit distance; 1 iff the token sequences match."""
    ta, tb = tokenize(phrase_a), tokenize(phrase_b)
    if not ta and not tb:
        return 1.0
    return 1.0 - token_edit_distance(ta, tb) / max(len(ta), len(tb))


@dataclass
class DistanceBucket:
    distance: int
    mean: float
    p25: float
    p75: float
    n: int


def distance_similarity_correlation(
    graph: RelationalGraph,
    max_distance: int = 5,
    sample_size: int = 10_000,
    seed: int = 0,
) -> list[DistanceBucket]:
    """Mean/quartile text similarity of entity pairs at each graph distance.

    Samples up to ``sample_size`` pairs per distance via BFS rings around
    random sources; a bucket that attracts no pairs is reported with n=0.
    """
    rng = np.random.default_rng(seed)
    n = len(graph)
    samples: dict[int, list[float]] = {d: [] for d in range(1, max_distance + 1)}
    attempts = 0
    max_attempts = 40 * sample_size
    while attempts < max_attempts and any(len(v) < sample_size for v in samples.values()):
        attempts += 1
        source = int(rng.integers(n))
        rings = _bfs_rings(graph, source, max_distance)
        for d in range(1, max_distance + 1):
            ring = rings.get(d)
            if not ring or len(samples[d]) >= sample_size:
                continue
            target = ring[int(rng.integers(len(ring)))]
            samples[d].append(text_similarity(graph.phrase(source), graph.phrase(target)))

    out: list[DistanceBucket] = []
    for d in range(1, max_distance + 1):
        values = samples[d]
        if not values:
            logger.warning("no entity pairs sampled at distance %d", d)
            out.append(DistanceBucket(distance=d, mean=float("nan"), p25=float("nan"), p75=float("nan"), n=0))
            continue
        arr = np.asarray(values)
        out.append(
            DistanceBucket(
                distance=d,
                mean=float(arr.mean()),
                p25=float(np.percentile(arr, 25)),
                p75=float(np.percentile(arr, 75)),
                n=len(values),
            )
        )
    return out


def _bfs_rings(graph: RelationalGraph, source: int, max_distance: int) -> dict[int, list[int]]:
    rings: dict[int, list[int]] = {}
    seen = {source}
    frontier = [source]
    for d in range(1, max_distance + 1):
        nxt: list[int] = []
        for node in frontier:
            for nb in graph._undirected[node]:
                if nb not in seen:
                    seen.add(nb)
                    nxt.append(nb)
        if not nxt:
            break
        rings[d] = nxt
        frontier = nxt
    return rings


def write_correlation_csv(buckets: Sequence[DistanceBucket], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["distance", "mean", "p25", "p75", "n"])
        for b in buckets:
            writer.writerow([b.distance, b.mean, b.p25, b.p75, b.n])


def string_baseline(
    graph: RelationalGraph,
    split: SplitSpec,
    k_list: Sequence[int] = (1, 10),
    fold: Fold = Fold.TEST,
) -> EvalReport:
    """Rank entities by token edit-distance similarity to the query synonym."""
    queries = split.pairs_in(graph, fold)
    entity_tokens = [tokenize(e.phrase) for e in graph.entities]
    ranks = []
    for gold, syn in queries:
        syn_tokens = tokenize(syn)
        scores = np.array([
            1.0 - token_edit_distance(syn_tokens, et) / max(len(syn_tokens), len(et))
            for et in entity_tokens
        ])
        ranks.append(_ranks_from_scores(scores[None, :], np.array([gold]))[0])
    return report_from_ranks(np.asarray(ranks), k_list)
