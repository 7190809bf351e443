"""Training orchestration: warm-up, epoch loop, Adam, cache refresh,
validation checkpointing, and the few-shot trainable-table mode.

Zero-shot training keeps candidate representations in a stop-gradient
cache refreshed every ``cache_refresh_period`` steps. Few-shot training
replaces the cache with a trainable embedding table seeded from the
encoder after warm-up. Warm-up itself runs only the contrastive
objective, then refreshes the cache.

Everything is driven by one seeded generator, so two runs with the same
config produce bit-identical loss logs.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .autodiff import Tensor, backward, zero_grads
from .encoder import CHECKPOINT_VERSION, EncoderConfig, EncoderModel, Vocabulary
from .graph import RelationalGraph, Triple, two_hop_paths
from .losses import (
    LossWeights,
    hard_negatives,
    loss_base,
    loss_contrastive,
    loss_first,
    loss_prompt,
    loss_second,
    loss_total,
)
from .scoring import CacheMode, EntityEmbeddingCache, SimilarityHead, refresh_cache
from .splits import EvalReport, Fold, Setting, SplitSpec, evaluate
from .templates import MaskedSide, T2Variant


class ConfigInvalid(ValueError):
    """The training configuration violates a precondition."""


class NonFiniteGradient(RuntimeError):
    """A gradient turned NaN or infinite."""


class LeakedTestSynonym(RuntimeError):
    """A held-out synonym reached a training batch."""


@dataclass
class TrainConfig:
    mode: str = "zero_shot"  # or "few_shot"
    warmup_iters: int = 400
    epochs: int = 30
    lr_initial: float = 1e-3
    lr_final: float = 1e-4
    batch_size: int = 32
    cache_refresh_period: int = 200
    weights: LossWeights = field(default_factory=LossWeights)
    negatives: int = 20
    seed: int = 0
    entity_names_visible: bool = True
    eval_every: int = 1  # epochs between validation passes; 0 disables
    float32: bool = False

    def validate(self) -> None:
        if self.mode not in ("zero_shot", "few_shot"):
            raise ConfigInvalid(f"unknown mode {self.mode!r}")
        if self.warmup_iters < 0:
            raise ConfigInvalid("warmup_iters must be >= 0")
        if self.epochs < 0:
            raise ConfigInvalid("epochs must be >= 0")
        if not (self.lr_initial >= self.lr_final > 0):
            raise ConfigInvalid("need lr_initial >= lr_final > 0")
        if self.batch_size < 1:
            raise ConfigInvalid("batch_size must be >= 1")
        if self.cache_refresh_period < 1:
            raise ConfigInvalid("cache_refresh_period must be >= 1")
        self.weights.validate()


class Adam:
    """Adam with per-parameter moments; decoupled from any schedule."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"adam_m:{k}": v for k, v in self.m.items()}
        out.update({f"adam_v:{k}": v for k, v in self.v.items()})
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], t: int) -> None:
        self.t = t
        self.m = {k[len("adam_m:"):]: arrays[k] for k in arrays if k.startswith("adam_m:")}
        self.v = {k[len("adam_v:"):]: arrays[k] for k in arrays if k.startswith("adam_v:")}


def step_optimizer(state: Adam, params: dict[str, Tensor], lr: float) -> None:
    """One Adam update from the gradients stored on ``params``."""
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {name}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * (g * g)
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)


def linear_lr(step: int, total: int, initial: float, final: float) -> float:
    """step 0 -> initial, step total-1 -> final, linear in between."""
    if total <= 1:
        return initial
    frac = min(step, total - 1) / (total - 1)
    return initial + (final - initial) * frac


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    adam: Adam = field(default_factory=Adam)
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    history: list[dict] = field(default_factory=list)
    best_val_acc1: float = -1.0
    best_path: Optional[str] = None
    final_report: Optional[EvalReport] = None


@dataclass
class _TrainingView:
    """The training-visible slice of the graph (identity when all entity
    names are visible)."""

    graph: RelationalGraph
    to_local: dict[int, int]
    to_global: list[int]
    pairs: list[tuple[int, str]]  # local entity index, synonym
    train_synonyms: dict[int, list[str]]  # local index -> training synonyms


def _build_view(graph: RelationalGraph, split: SplitSpec, config: TrainConfig) -> _TrainingView:
    train_pairs = [graph.pairs[i] for i, f in enumerate(split.pair_folds) if f == Fold.TRAIN]
    if config.entity_names_visible or split.entity_folds is None:
        visible = list(range(len(graph)))
    else:
        visible = [i for i, f in enumerate(split.entity_folds) if f in (0, 1)]
    to_local = {g: l for l, g in enumerate(visible)}

    if len(visible) == len(graph):
        sub = graph
    else:
        from .graph import build_graph

        entities = [(graph.entities[g].id, graph.entities[g].phrase) for g in visible]
        sub_pairs = [(s, graph.entities[e].id) for e, s in train_pairs if e in to_local]
        triples = [
            (graph.entities[t.head].id, t.relation, graph.entities[t.tail].id)
            for t in graph.edges
            if t.head in to_local and t.tail in to_local
        ]
        sub = build_graph(entities, sub_pairs, triples)

    local_pairs = [(to_local[e], s) for e, s in train_pairs if e in to_local]
    train_syns: dict[int, list[str]] = {}
    for e, s in local_pairs:
        train_syns.setdefault(e, []).append(s)
    return _TrainingView(graph=sub, to_local=to_local, to_global=visible, pairs=local_pairs, train_synonyms=train_syns)


def _forbidden_synonyms(graph: RelationalGraph, split: SplitSpec) -> frozenset[str]:
    return frozenset(
        syn for (_e, syn), fold in zip(graph.pairs, split.pair_folds) if fold != Fold.TRAIN
    )


def _guard(synonyms: Sequence[str], forbidden: frozenset[str]) -> None:
    for s in synonyms:
        if s in forbidden:
            raise LeakedTestSynonym(f"held-out synonym {s!r} reached a training batch")


def _sample_substitution(rng: np.random.Generator, view: _TrainingView, local_idx: int) -> Optional[str]:
    """Uniform over {entity name} + its training synonyms; name -> None."""
    options = view.train_synonyms.get(local_idx, [])
    pick = int(rng.integers(len(options) + 1))
    return None if pick == 0 else options[pick - 1]


def warmup(
    model: EncoderModel,
    head: SimilarityHead,
    cache: EntityEmbeddingCache,
    graph: RelationalGraph,
    iters: int,
    config: TrainConfig,
    state: TrainState,
    log=None,
) -> None:
    """Contrastive-only steps to spread entity representations, then refresh."""
    params = {**model.params, **head.params}
    n = len(graph)
    for _ in range(iters):
        batch = state.rng.choice(n, size=min(config.batch_size, n), replace=False)
        zero_grads(params.values())
        lc = loss_contrastive(model, head, graph, [int(i) for i in batch], cache)
        if not np.isfinite(lc.data):
            raise RuntimeError("warm-up loss diverged")
        backward(lc)
        step_optimizer(state.adam, params, config.lr_initial)
        state.step += 1
        entry = {"step": state.step, "phase": "warmup", "losses": {"c": float(lc.data)}, "lr": config.lr_initial}
        state.history.append(entry)
        if log:
            log(entry)
    refresh_cache(cache, model, graph, period=0)


def train(
    model: EncoderModel,
    head: SimilarityHead,
    cache: EntityEmbeddingCache,
    graph: RelationalGraph,
    split: SplitSpec,
    config: TrainConfig,
    out_dir=None,
    resume: Optional[TrainState] = None,
    stop_after_epoch: Optional[int] = None,
) -> TrainState:
    """Full training run; returns the state with history and best checkpoint.

    The caller builds the vocabulary over training-visible text; this
    function additionally enforces that no held-out synonym enters a
    training batch. ``stop_after_epoch`` pauses at an epoch boundary while
    keeping the learning-rate horizon of ``config.epochs``, so a run saved
    there and resumed reproduces the uninterrupted trajectory exactly.
    """
    config.validate()
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
    log_fh = open(out_path / "train_log.jsonl", "a", encoding="utf-8") if out_path else None

    def log(entry: dict) -> None:
        if log_fh:
            log_fh.write(json.dumps(entry) + "\n")
            log_fh.flush()

    try:
        return _train_inner(model, head, cache, graph, split, config, out_path, resume, log, stop_after_epoch)
    finally:
        if log_fh:
            log_fh.close()


def _train_inner(model, head, cache, graph, split, config, out_path, resume, log, stop_after_epoch=None) -> TrainState:
    view = _build_view(graph, split, config)
    if not view.pairs:
        raise ConfigInvalid("split yields no training pairs")
    forbidden = _forbidden_synonyms(graph, split)
    _guard([s for _, s in view.pairs], forbidden)

    head.train()
    few_shot = config.mode == "few_shot"
    train_cache = cache
    if resume is None and len(view.graph) != len(graph):
        train_cache = EntityEmbeddingCache.from_encoder(model, view.graph)
    if not few_shot and train_cache.staleness_bound is None:
        train_cache.staleness_bound = config.cache_refresh_period

    state = resume if resume is not None else TrainState(rng=np.random.default_rng(config.seed))

    if resume is None:
        warmup(model, head, train_cache, view.graph, config.warmup_iters, config, state, log)
        if few_shot:
            train_cache.to_trainable_table()
    # on resume the checkpoint's cache matrix and staleness are the exact
    # mid-run state; refreshing here would fork the trajectory

    params = {**model.params, **head.params}
    if few_shot and train_cache.mode == CacheMode.TRAINABLE_TABLE:
        params["entity_table"] = train_cache.table

    # instance pools over the training view
    lc_pool = list(range(len(view.graph)))
    l1_pool: list[tuple[Triple, MaskedSide]] = []
    for t in view.graph.edges:
        l1_pool.append((t, MaskedSide.HEAD))
        l1_pool.append((t, MaskedSide.TAIL))
    l2_pool: list[tuple[tuple[int, str, int, int], T2Variant]] = []
    for path in two_hop_paths(view.graph):
        l2_pool.append((path, T2Variant.MASK_HEAD_AND_GRAND))
        l2_pool.append((path, T2Variant.MASK_MID_AND_GRAND))

    w = config.weights
    steps_per_epoch = math.ceil(len(view.pairs) / config.batch_size)
    total_main_steps = config.epochs * steps_per_epoch

    def sample_pool(pool, rng):
        size = min(config.batch_size, len(pool))
        idx = rng.choice(len(pool), size=size, replace=False)
        return [pool[int(i)] for i in idx]

    for epoch in range(state.epoch, config.epochs):
        order = state.rng.permutation(len(view.pairs))
        for start in range(0, len(view.pairs), config.batch_size):
            main_step = epoch * steps_per_epoch + start // config.batch_size
            lr = linear_lr(main_step, total_main_steps, config.lr_initial, config.lr_final)

            pair_batch = [view.pairs[int(i)] for i in order[start : start + config.batch_size]]
            _guard([s for _, s in pair_batch], forbidden)

            terms: dict[str, Tensor] = {}
            if w.lam_p > 0:
                terms["p"] = loss_prompt(model, head, view.graph, pair_batch, train_cache)
            if w.lam_c > 0:
                batch_c = [int(i) for i in state.rng.choice(len(lc_pool), size=min(config.batch_size, len(lc_pool)), replace=False)]
                terms["c"] = loss_contrastive(model, head, view.graph, batch_c, train_cache)
            if w.lam_1 > 0 and l1_pool:
                items = []
                for triple, side in sample_pool(l1_pool, state.rng):
                    surface = triple.tail if side == MaskedSide.HEAD else triple.head
                    sub = _sample_substitution(state.rng, view, surface)
                    if sub is not None:
                        _guard([sub], forbidden)
                    items.append((triple, side, sub))
                terms["first"] = loss_first(
                    model, head, view.graph, items, train_cache, allowed_synonyms=view.train_synonyms
                )
            if w.lam_2 > 0 and l2_pool:
                items = []
                for path, variant in sample_pool(l2_pool, state.rng):
                    unmasked = path[2] if variant == T2Variant.MASK_HEAD_AND_GRAND else path[0]
                    sub = _sample_substitution(state.rng, view, unmasked)
                    if sub is not None:
                        _guard([sub], forbidden)
                    items.append((path, variant, sub))
                terms["second"] = loss_second(
                    model, head, view.graph, items, train_cache, allowed_synonyms=view.train_synonyms
                )
            if w.lam_base > 0:
                negs = hard_negatives(model, head, view.graph, pair_batch, train_cache, m=config.negatives)
                terms["base"] = loss_base(model, head, view.graph, pair_batch, negs, train_cache)

            total = loss_total(w, terms)
            if not np.isfinite(total.data):
                raise RuntimeError(f"loss diverged at step {state.step}")
            zero_grads(params.values())
            backward(total)
            step_optimizer(state.adam, params, lr)
            state.step += 1

            if train_cache.mode == CacheMode.CACHED_STOP_GRAD:
                train_cache.tick()
                refresh_cache(train_cache, model, view.graph, period=config.cache_refresh_period)

            entry = {
                "step": state.step,
                "phase": "train",
                "losses": {k: float(v.data) for k, v in terms.items()},
                "total": float(total.data),
                "lr": lr,
            }
            state.history.append(entry)
            log(entry)

        state.epoch = epoch + 1
        if stop_after_epoch is not None and state.epoch >= stop_after_epoch:
            break
        if config.eval_every and (epoch + 1) % config.eval_every == 0:
            report = _validation_report(model, head, train_cache, graph, split, config)
            if report is not None:
                entry = {"step": state.step, "phase": "valid", "val_acc1": report.acc[1]}
                state.history.append(entry)
                log(entry)
                if report.acc[1] > state.best_val_acc1:
                    state.best_val_acc1 = report.acc[1]
                    if out_path is not None:
                        best = out_path / "best.npz"
                        save_checkpoint(best, model, head, train_cache, config, state)
                        state.best_path = str(best)

    if out_path is not None:
        last = out_path / "last.npz"
        save_checkpoint(last, model, head, train_cache, config, state)
        if state.best_path is None:
            state.best_path = str(last)
    return state


def _validation_report(model, head, train_cache, graph, split, config) -> Optional[EvalReport]:
    valid_pairs = split.pairs_in(graph, Fold.VALID)
    if not valid_pairs:
        return None
    eval_cache = _inference_cache(model, train_cache, graph)
    return evaluate(model, head, eval_cache, graph, split, k_list=(1,), fold=Fold.VALID)


def _inference_cache(model, train_cache, graph) -> EntityEmbeddingCache:
    """A full-graph cache for ranking: the trainable table when it covers
    every entity, otherwise a fresh re-encode (never mutates the training
    cache)."""
    if train_cache.mode == CacheMode.TRAINABLE_TABLE and train_cache.table.data.shape[0] == len(graph):
        return train_cache
    return EntityEmbeddingCache.from_encoder(model, graph)


def final_evaluation(
    model: EncoderModel,
    head: SimilarityHead,
    train_cache: EntityEmbeddingCache,
    graph: RelationalGraph,
    split: SplitSpec,
    k_list: Sequence[int] = (1, 10),
    fold: Fold = Fold.TEST,
) -> EvalReport:
    cache = _inference_cache(model, train_cache, graph)
    return evaluate(model, head, cache, graph, split, k_list=k_list, fold=fold)


# checkpointing -----------------------------------------------------------


def save_checkpoint(
    path,
    model: EncoderModel,
    head: SimilarityHead,
    cache: EntityEmbeddingCache,
    config: TrainConfig,
    state: Optional[TrainState] = None,
) -> None:
    meta = {
        "checkpoint_version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "vocab": model.vocab.to_json(),
        "head": head.state_dict(),
        "cache_mode": cache.mode.value,
        "cache_staleness": cache.staleness,
        "train_config": {**asdict(config), "weights": asdict(config.weights)},
    }
    arrays = {f"param:{k}": v for k, v in model.state_arrays().items()}
    arrays["cache_matrix"] = cache.matrix_view()
    if state is not None:
        meta["state"] = {
            "step": state.step,
            "epoch": state.epoch,
            "adam_t": state.adam.t,
            "best_val_acc1": state.best_val_acc1,
            "rng": state.rng.bit_generator.state,
        }
        arrays.update(state.adam.state_arrays())
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8), **arrays)


def load_checkpoint(path) -> tuple[EncoderModel, SimilarityHead, EntityEmbeddingCache, TrainConfig, Optional[TrainState]]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(bytes(z["__meta__"]).decode("utf-8"))
        if meta.get("checkpoint_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('checkpoint_version')}")
        model = EncoderModel(Vocabulary.from_json(meta["vocab"]), EncoderConfig(**meta["config"]))
        model.load_state_arrays({k[len("param:"):]: z[k] for k in z.files if k.startswith("param:")})
        head = SimilarityHead()
        head.load_state_dict(meta["head"])
        cache = EntityEmbeddingCache(z["cache_matrix"], mode=CacheMode(meta["cache_mode"]))
        cache.staleness = meta["cache_staleness"]
        tc_raw = dict(meta["train_config"])
        tc_raw["weights"] = LossWeights(**tc_raw["weights"])
        config = TrainConfig(**tc_raw)
        state = None
        if "state" in meta:
            state = TrainState()
            st = meta["state"]
            state.step = st["step"]
            state.epoch = st["epoch"]
            state.best_val_acc1 = st["best_val_acc1"]
            state.adam.load_state_arrays({k: z[k] for k in z.files if k.startswith("adam_")}, st["adam_t"])
            rng = np.random.default_rng(0)
            rng.bit_generator.state = st["rng"]
            state.rng = rng
    return model, head, cache, config, state
