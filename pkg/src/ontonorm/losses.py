"""The four training objectives and their weighted combination.

Every objective is a negative log softmax over candidate entities, where
the logit for a candidate is the batch-normalized dot product between a
query representation (a mask readout) and the candidate's zeroth-order
representation:

* base        -- synonym query vs. {gold} + hard negatives
* prompt      -- synonym query vs. the whole entity set
* contrastive -- the entity's own fresh readout vs. the whole entity set
* first/second order -- mask readouts from relational templates vs. the
  whole entity set, gold being the masked entity

Candidates always come from the entity cache: constants in stop-gradient
mode, trainable table rows in few-shot mode. Batch arguments are lists;
a single example is a list of one. The loss of a batch is the mean over
its instances (an instance may contribute two log terms for the
two-mask templates).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .autodiff import Tensor, logsumexp, no_grad, reshape, swapaxes, take
from .encoder import EncoderModel
from .graph import RelationalGraph, Triple
from .scoring import EntityEmbeddingCache, SimilarityHead
from .templates import (
    IGNORED,
    MaskedSide,
    PromptInstance,
    T2Variant,
    render_t0,
    render_t1,
    render_t2,
)


class AllWeightsZero(ValueError):
    """Every loss weight is zero; there is nothing to optimize."""


@dataclass
class LossWeights:
    lam_p: float = 1.0
    lam_c: float = 1.0
    lam_1: float = 1.0
    lam_2: float = 1.0
    lam_base: float = 0.0

    def validate(self) -> None:
        values = (self.lam_p, self.lam_c, self.lam_1, self.lam_2, self.lam_base)
        if any(v < 0 for v in values):
            raise ValueError("loss weights must be non-negative")
        if all(v == 0 for v in values):
            raise AllWeightsZero("at least one loss weight must be positive")

    def as_dict(self) -> dict[str, float]:
        return {
            "p": self.lam_p,
            "c": self.lam_c,
            "first": self.lam_1,
            "second": self.lam_2,
            "base": self.lam_base,
        }


@dataclass
class HardNegativeSet:
    """Per-pair difficult negative candidate indices, gold excluded."""

    indices: list[np.ndarray]

    def __post_init__(self):
        self.indices = [np.asarray(ix, dtype=np.int64) for ix in self.indices]


def hard_negatives(
    model: EncoderModel,
    head: SimilarityHead,
    graph: RelationalGraph,
    pairs: Sequence[tuple[int, str]],
    cache: EntityEmbeddingCache,
    m: int = 20,
) -> HardNegativeSet:
    """The min(m, |V|-1) highest-similarity non-gold candidates per pair,
    scored against the current cache; ties break by entity index."""
    matrix = cache.matrix_view()
    n = matrix.shape[0]
    take_m = min(m, n - 1)
    out: list[np.ndarray] = []
    with no_grad():
        insts = [render_t0(syn, target=gold) for gold, syn in pairs]
        reps, _ = model.encode_batch(insts)
    scores = head.normalize_array(reps.data @ matrix.T)
    if float(head.gamma.data) < 0:
        scores = -scores  # similarity exp(BN(dot)) is decreasing when gamma < 0
    for row, (gold, _syn) in zip(scores, pairs):
        row = row.copy()
        row[gold] = -np.inf
        order = np.argsort(-row, kind="stable")
        out.append(order[:take_m].astype(np.int64))
    return HardNegativeSet(out)


def _nll_rows(
    head: SimilarityHead,
    queries: Tensor,
    candidates: Tensor,
    gold: np.ndarray,
    update_stats: Optional[bool],
    subset: Optional[np.ndarray] = None,
) -> Tensor:
    """Per-row -log softmax losses.

    With ``subset`` (B, C) each row scores its own candidate list and
    ``gold`` holds positions inside the row; otherwise all rows share the
    full candidate matrix and ``gold`` holds entity indices.
    """
    nb = queries.data.shape[0]
    d = queries.data.shape[1]
    if subset is not None:
        nc = subset.shape[1]
        rows = reshape(take(candidates, subset.reshape(-1)), (nb, nc, d))
        dots = (reshape(queries, (nb, 1, d)) * rows).sum(axis=2)
    else:
        nc = candidates.data.shape[0]
        dots = queries @ swapaxes(candidates, 0, 1)
    z = head.normalize(dots, update_stats=update_stats)
    z_gold = take(reshape(z, (nb * nc,)), np.arange(nb) * nc + np.asarray(gold))
    return logsumexp(z, axis=1) - z_gold


def _encode_queries(model: EncoderModel, instances: Sequence[PromptInstance]) -> tuple[Tensor, np.ndarray]:
    reps, owners = model.encode_batch(instances)
    gold = np.array(
        [instances[b].mask_slots[s][1] for b, s in owners],
        dtype=np.int64,
    )
    if (gold == IGNORED).any():
        raise ValueError("encode returned an ignored slot")
    return reps, gold


def loss_base(
    model: EncoderModel,
    head: SimilarityHead,
    graph: RelationalGraph,
    pairs: Sequence[tuple[int, str]],
    negatives: HardNegativeSet,
    cache: EntityEmbeddingCache,
    update_stats: Optional[bool] = None,
) -> Tensor:
    """-log softmax over {gold} + hard negatives for each (entity, synonym)."""
    if not pairs:
        raise ValueError("empty pair batch")
    widths = {len(ix) for ix in negatives.indices}
    if len(widths) != 1:
        raise ValueError("negative sets must share one size per batch")
    for (gold, _), ix in zip(pairs, negatives.indices):
        if gold in ix:
            raise ValueError("gold entity leaked into its negative set")
    insts = [render_t0(syn, target=gold) for gold, syn in pairs]
    queries, _ = _encode_queries(model, insts)
    subset = np.stack(
        [np.concatenate(([gold], ix)) for (gold, _), ix in zip(pairs, negatives.indices)]
    )
    rows = _nll_rows(head, queries, cache.candidates(), np.zeros(len(pairs), dtype=np.int64),
                     update_stats, subset=subset)
    return rows.mean()


def loss_prompt(
    model: EncoderModel,
    head: SimilarityHead,
    graph: RelationalGraph,
    pairs: Sequence[tuple[int, str]],
    cache: EntityEmbeddingCache,
    update_stats: Optional[bool] = None,
) -> Tensor:
    """-log softmax over the whole entity set for each (entity, synonym)."""
    if not pairs:
        raise ValueError("empty pair batch")
    cache.check_fresh()
    insts = [render_t0(syn, target=gold) for gold, syn in pairs]
    queries, gold = _encode_queries(model, insts)
    return _nll_rows(head, queries, cache.candidates(), gold, update_stats).mean()


def loss_contrastive(
    model: EncoderModel,
    head: SimilarityHead,
    graph: RelationalGraph,
    entity_indices: Sequence[int],
    cache: EntityEmbeddingCache,
    update_stats: Optional[bool] = None,
) -> Tensor:
    """Each entity's fresh readout must pick itself out of the cache."""
    if len(entity_indices) == 0:
        raise ValueError("empty entity batch")
    cache.check_fresh()
    insts = [render_t0(graph.phrase(i), target=i) for i in entity_indices]
    queries, gold = _encode_queries(model, insts)
    return _nll_rows(head, queries, cache.candidates(), gold, update_stats).mean()


def loss_first(
    model: EncoderModel,
    head: SimilarityHead,
    graph: RelationalGraph,
    items: Sequence[tuple[Triple, MaskedSide, Optional[str]]],
    cache: EntityEmbeddingCache,
    update_stats: Optional[bool] = None,
    allowed_synonyms: Optional[dict[int, Sequence[str]]] = None,
) -> Tensor:
    """First-order mask readouts classified against the entity set."""
    if not items:
        raise ValueError("empty triple batch")
    cache.check_fresh()
    insts = []
    for triple, side, substitution in items:
        surface_idx = triple.tail if side == MaskedSide.HEAD else triple.head
        allowed = allowed_synonyms.get(surface_idx) if allowed_synonyms else None
        insts.append(render_t1(graph, triple, side, substitution=substitution, allowed_synonyms=allowed))
    queries, gold = _encode_queries(model, insts)
    return _nll_rows(head, queries, cache.candidates(), gold, update_stats).mean()


def loss_second(
    model: EncoderModel,
    head: SimilarityHead,
    graph: RelationalGraph,
    items: Sequence[tuple[tuple[int, str, int, int], T2Variant, Optional[str]]],
    cache: EntityEmbeddingCache,
    update_stats: Optional[bool] = None,
    allowed_synonyms: Optional[dict[int, Sequence[str]]] = None,
) -> Tensor:
    """Second-order templates: each of the two mask readouts is classified
    against the entity set; a path-variant instance contributes the sum of
    its slot terms, and the batch reduces by mean over instances."""
    if not items:
        raise ValueError("empty path batch")
    cache.check_fresh()
    insts = []
    for path, variant, substitution in items:
        unmasked = path[2] if variant == T2Variant.MASK_HEAD_AND_GRAND else path[0]
        allowed = allowed_synonyms.get(unmasked) if allowed_synonyms else None
        if path[3] is None:
            # no real grandparent: render the padded first-order surface,
            # whose trailing mask is ignored (one log term)
            side = MaskedSide.HEAD if variant == T2Variant.MASK_HEAD_AND_GRAND else MaskedSide.TAIL
            insts.append(
                render_t1(
                    graph,
                    Triple(path[0], path[1], path[2]),
                    side,
                    substitution=substitution,
                    allowed_synonyms=allowed,
                    padded=True,
                )
            )
        else:
            insts.append(render_t2(graph, path, variant, substitution=substitution, allowed_synonyms=allowed))
    queries, gold = _encode_queries(model, insts)
    rows = _nll_rows(head, queries, cache.candidates(), gold, update_stats)
    return rows.sum() * (1.0 / len(items))


def loss_total(weights: LossWeights, terms: dict[str, Tensor]) -> Tensor:
    """Weighted sum of the active terms; missing terms contribute zero."""
    weights.validate()
    wmap = weights.as_dict()
    total: Optional[Tensor] = None
    for name, term in terms.items():
        if name not in wmap:
            raise KeyError(f"unknown loss term {name!r}")
        w = wmap[name]
        if w == 0:
            continue
        piece = term * w
        total = piece if total is None else total + piece
    if total is None:
        return Tensor(np.asarray(0.0))
    return total
