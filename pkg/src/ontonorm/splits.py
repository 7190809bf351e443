"""Few-shot / zero-shot split construction and Acc@k evaluation.

Few-shot shuffles the synonym pairs into six folds (four train, one
valid, one test), so test entities generally keep other synonyms in
training. Zero-shot shuffles the entities into three folds (two train,
one test) and halves the test fold's pairs into validation and test, so
no entity owns pairs on both sides; pass ``no_valid=True`` to keep the
whole held-out fold as test.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .autodiff import no_grad
from .encoder import EncoderModel
from .graph import RelationalGraph
from .scoring import EntityEmbeddingCache, HeadMode, SimilarityHead
from .templates import render_t0


class EmptyTestSet(ValueError):
    """The split assigns no pairs to the test fold."""


class Setting(enum.Enum):
    FEW_SHOT = "few_shot"
    ZERO_SHOT = "zero_shot"


class Fold(enum.Enum):
    TRAIN = "train"
    VALID = "valid"
    TEST = "test"


@dataclass
class SplitSpec:
    setting: Setting
    seed: int
    pair_folds: list[Fold]
    entity_folds: Optional[list[int]] = None  # zero-shot: 0/1 train, 2 held out

    def pairs_in(self, graph: RelationalGraph, fold: Fold) -> list[tuple[int, str]]:
        return [p for p, f in zip(graph.pairs, self.pair_folds) if f == fold]

    def save_tsv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"# setting={self.setting.value} seed={self.seed}\n")
            for i, fold in enumerate(self.pair_folds):
                fh.write(f"{i}\t{fold.value}\n")
            if self.entity_folds is not None:
                for i, fold in enumerate(self.entity_folds):
                    fh.write(f"e:{i}\t{fold}\n")

    @classmethod
    def load_tsv(cls, path) -> "SplitSpec":
        pair_folds: list[tuple[int, Fold]] = []
        entity_folds: list[tuple[int, int]] = []
        setting = Setting.FEW_SHOT
        seed = 0
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                if line.startswith("#"):
                    for piece in line[1:].split():
                        key, _, value = piece.partition("=")
                        if key == "setting":
                            setting = Setting(value)
                        elif key == "seed":
                            seed = int(value)
                    continue
                key, _, fold = line.partition("\t")
                if key.startswith("e:"):
                    entity_folds.append((int(key[2:]), int(fold)))
                else:
                    pair_folds.append((int(key), Fold(fold)))
        pair_folds.sort()
        entity_folds.sort()
        return cls(
            setting=setting,
            seed=seed,
            pair_folds=[f for _, f in pair_folds],
            entity_folds=[f for _, f in entity_folds] or None,
        )


def make_few_shot_split(pairs: Sequence[tuple[int, str]], seed: int) -> SplitSpec:
    """Round-robin the shuffled pairs into six folds: 0-3 train, 4 valid, 5 test."""
    if not pairs:
        raise ValueError("no pairs to split")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pairs))
    folds = [Fold.TRAIN] * len(pairs)
    for position, pair_idx in enumerate(order):
        bucket = position % 6
        if bucket == 4:
            folds[pair_idx] = Fold.VALID
        elif bucket == 5:
            folds[pair_idx] = Fold.TEST
    return SplitSpec(setting=Setting.FEW_SHOT, seed=seed, pair_folds=folds)


def make_zero_shot_split(graph: RelationalGraph, seed: int, no_valid: bool = False) -> SplitSpec:
    """Entity folds 0/1 train, fold 2 held out; held-out pairs halve into
    valid/test unless ``no_valid``."""
    rng = np.random.default_rng(seed)
    n = len(graph)
    entity_folds = [0] * n
    for position, ent in enumerate(rng.permutation(n)):
        entity_folds[ent] = position % 3

    held_out = [i for i, (ent, _syn) in enumerate(graph.pairs) if entity_folds[ent] == 2]
    pair_folds = [Fold.TRAIN] * len(graph.pairs)
    if no_valid:
        for i in held_out:
            pair_folds[i] = Fold.TEST
    else:
        order = rng.permutation(len(held_out))
        half = len(held_out) // 2
        for position, local in enumerate(order):
            pair_folds[held_out[local]] = Fold.VALID if position < half else Fold.TEST
    return SplitSpec(setting=Setting.ZERO_SHOT, seed=seed, pair_folds=pair_folds, entity_folds=entity_folds)


@dataclass
class EvalReport:
    acc: dict[int, float]
    n_queries: int
    ranks: list[int] = field(default_factory=list, repr=False)

    def to_json(self, ranks_path: Optional[str] = None) -> str:
        return json.dumps(
            {
                "acc": {str(k): v for k, v in sorted(self.acc.items())},
                "n_queries": self.n_queries,
                "per_query_ranks_path": ranks_path,
            }
        )


def _ranks_from_scores(scores: np.ndarray, gold: np.ndarray) -> np.ndarray:
    """Rank of the gold column per row, counting ties below it by index."""
    gold_scores = scores[np.arange(len(gold)), gold]
    better = (scores > gold_scores[:, None]).sum(axis=1)
    tie_mask = scores == gold_scores[:, None]
    tie_before = np.array([tie_mask[i, : gold[i]].sum() for i in range(len(gold))])
    return 1 + better + tie_before


def report_from_ranks(ranks: np.ndarray, k_list: Sequence[int]) -> EvalReport:
    if len(ranks) == 0:
        raise EmptyTestSet("no queries to evaluate")
    acc = {int(k): float((ranks <= k).mean()) for k in k_list}
    return EvalReport(acc=acc, n_queries=len(ranks), ranks=[int(r) for r in ranks])


def evaluate(
    model: EncoderModel,
    head: SimilarityHead,
    cache: EntityEmbeddingCache,
    graph: RelationalGraph,
    split: SplitSpec,
    k_list: Sequence[int] = (1, 10),
    fold: Fold = Fold.TEST,
    chunk: int = 64,
) -> EvalReport:
    """Rank every entity for each query synonym in ``fold``; Acc@k over ranks.

    Runs the head in eval mode (restored afterwards); candidate scores are
    the batch-norm affine of dot products against the cache, which ranks
    identically to the probabilities.
    """
    queries = split.pairs_in(graph, fold)
    if not queries:
        raise EmptyTestSet(f"split has no pairs in fold {fold.value}")
    matrix = cache.matrix_view()
    prev_mode = head.mode
    head.eval()
    try:
        ranks: list[np.ndarray] = []
        for start in range(0, len(queries), chunk):
            batch = queries[start : start + chunk]
            insts = [render_t0(syn, target=gold) for gold, syn in batch]
            with no_grad():
                reps, _ = model.encode_batch(insts)
            scores = head.normalize_array(reps.data @ matrix.T)
            if float(head.gamma.data) < 0:
                scores = -scores  # exp(BN(.)) is order-reversing when gamma < 0
            gold = np.array([g for g, _ in batch])
            ranks.append(_ranks_from_scores(scores, gold))
    finally:
        head.mode = prev_mode
    return report_from_ranks(np.concatenate(ranks), k_list)
