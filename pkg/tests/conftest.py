"""Shared fixtures: a 10-entity toy ontology plus encoder/head/cache."""

import numpy as np
import pytest

from ontonorm.encoder import EncoderConfig, EncoderModel, build_vocab
from ontonorm.graph import build_graph
from ontonorm.scoring import EntityEmbeddingCache, SimilarityHead
from ontonorm.templates import RELATION_PHRASES, TEMPLATE_WORDS

TOY_ENTITIES = [
    ("B:0", "process"),
    ("B:1", "heart process"),
    ("B:2", "heart contraction"),
    ("B:3", "blood circulation"),
    ("B:4", "regulation"),
    ("B:5", "regulation of blood circulation"),
    ("B:6", "regulation of heart contraction"),
    ("B:7", "neuron"),
    ("B:8", "LK neuron"),
    ("B:9", "abdominal LK neuron"),
]

TOY_PAIRS = [
    ("cardiac process", "B:1"),
    ("cardiac contraction", "B:2"),
    ("heart beat", "B:2"),
    ("circulation of blood", "B:3"),
    ("circulation control", "B:5"),
    ("control of heart contraction", "B:6"),
    ("leucokinin neuron", "B:8"),
    ("abdominal leucokinin neuron", "B:9"),
    ("LK neuron of abdomen", "B:9"),
    ("heart pumping", "B:2"),
]

TOY_TRIPLES = [
    ("B:1", "is_a", "B:0"),
    ("B:2", "is_a", "B:1"),
    ("B:3", "is_a", "B:1"),
    ("B:5", "is_a", "B:4"),
    ("B:6", "is_a", "B:5"),
    ("B:5", "regulates", "B:3"),
    ("B:6", "regulates", "B:2"),
    ("B:8", "is_a", "B:7"),
    ("B:9", "is_a", "B:8"),
    ("B:2", "part_of", "B:3"),
]


def make_toy_graph():
    return build_graph(TOY_ENTITIES, TOY_PAIRS, TOY_TRIPLES)


def make_toy_vocab(graph):
    corpus = [e.phrase for e in graph.entities]
    for syns in graph.synonyms.values():
        corpus.extend(syns)
    corpus.extend(RELATION_PHRASES.values())
    corpus.extend(TEMPLATE_WORDS)
    return build_vocab(corpus)


def make_toy_model(graph, seed=0, d_model=16, depth=1, n_heads=2, d_ff=32):
    vocab = make_toy_vocab(graph)
    cfg = EncoderConfig(depth=depth, d_model=d_model, n_heads=n_heads, d_ff=d_ff, max_len=32)
    return EncoderModel(vocab, cfg, seed=seed)


@pytest.fixture()
def toy_graph():
    return make_toy_graph()


@pytest.fixture()
def toy_model(toy_graph):
    return make_toy_model(toy_graph)


@pytest.fixture()
def toy_head():
    return SimilarityHead()


@pytest.fixture()
def toy_cache(toy_model, toy_graph):
    return EntityEmbeddingCache.from_encoder(toy_model, toy_graph)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion."""
    entries = []
    for key, passed in (("passed", True), ("failed", False)):
        for rep in terminalreporter.stats.get(key, []):
            if "test_acceptance" in getattr(rep, "nodeid", ""):
                entries.append((rep.nodeid.split("::")[-1], passed))
    if entries:
        terminalreporter.write_sep("=", "acceptance criteria")
        for name, passed in sorted(entries):
            terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}")
