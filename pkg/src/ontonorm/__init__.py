"""Graph-aware prompt-template toolkit for ontology entity normalization."""

__version__ = "0.1.0"

from .encoder import EncoderConfig, EncoderModel, Vocabulary, build_vocab, encode, tokenize
from .graph import RelationalGraph, Triple, build_graph, depth, shortest_distance, two_hop_paths
from .losses import LossWeights
from .obo import normalize_dataset, parse_obo, write_dataset_tsvs
from .scoring import EntityEmbeddingCache, SimilarityHead, predict_probabilities, rank_candidates
from .splits import EvalReport, SplitSpec, evaluate, make_few_shot_split, make_zero_shot_split
from .templates import RELATION_PHRASES, PromptInstance, render_t0, render_t1, render_t2
from .trainer import TrainConfig, train

__all__ = [
    "EncoderConfig",
    "EncoderModel",
    "EntityEmbeddingCache",
    "EvalReport",
    "LossWeights",
    "PromptInstance",
    "RELATION_PHRASES",
    "RelationalGraph",
    "SimilarityHead",
    "SplitSpec",
    "TrainConfig",
    "Triple",
    "Vocabulary",
    "build_graph",
    "build_vocab",
    "depth",
    "encode",
    "evaluate",
    "make_few_shot_split",
    "make_zero_shot_split",
    "normalize_dataset",
    "parse_obo",
    "predict_probabilities",
    "rank_candidates",
    "render_t0",
    "render_t1",
    "render_t2",
    "shortest_distance",
    "tokenize",
    "train",
    "two_hop_paths",
    "write_dataset_tsvs",
]
