"""Similarity head, probability model, candidate ranking, and the entity
embedding cache.

Similarity between two representations is exp(BN(dot)), where BN is a
trainable scalar batch norm over the dot products in the current forward
pass. Normalizing the dots keeps early-training similarities from
saturating the exponential. Probabilities are softmax over candidate
similarities, computed in log space.

The cache holds the zeroth-order representation of every entity. In
stop-gradient mode its rows are constants refreshed periodically from
the encoder; in trainable-table mode the rows are a first-class
parameter (the few-shot configuration).
"""

from __future__ import annotations

import enum
import json
import struct
import zlib
from typing import Optional, Sequence

import numpy as np

from .autodiff import Tensor, exp, logsumexp, no_grad
from .encoder import EncoderModel
from .graph import RelationalGraph
from .templates import render_t0

_CACHE_MAGIC = b"ONCACHE1"


class SingletonTrainBatch(ValueError):
    """Train-mode batch norm needs at least two dot products for a variance."""


class EmptyCandidates(ValueError):
    """predict_probabilities needs at least one candidate."""


class StaleCache(RuntimeError):
    """The entity cache exceeded its configured staleness bound."""


class HeadMode(enum.Enum):
    TRAIN = "train"
    EVAL = "eval"


class CacheMode(enum.Enum):
    CACHED_STOP_GRAD = "cached_stop_grad"
    TRAINABLE_TABLE = "trainable_table"


class SimilarityHead:
    """Trainable scalar batch norm followed by exp, applied to dot products."""

    def __init__(self, eps: float = 1e-5, momentum: float = 0.1, dtype=np.float64):
        self.eps = float(eps)
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        self.momentum = float(momentum)
        self.gamma = Tensor(np.asarray(1.0, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.asarray(0.0, dtype=dtype), requires_grad=True)
        self.running_mean = 0.0
        self.running_var = 1.0
        self.mode = HeadMode.TRAIN

    def train(self) -> "SimilarityHead":
        self.mode = HeadMode.TRAIN
        return self

    def eval(self) -> "SimilarityHead":
        self.mode = HeadMode.EVAL
        return self

    @property
    def params(self) -> dict[str, Tensor]:
        return {"head.gamma": self.gamma, "head.beta": self.beta}

    def normalize(self, dots: Tensor, update_stats: Optional[bool] = None) -> Tensor:
        """BN over every dot in ``dots`` (train) or running stats (eval)."""
        if self.mode == HeadMode.TRAIN:
            n = dots.data.size
            if n < 2:
                raise SingletonTrainBatch("train-mode batch norm needs >= 2 dot products")
            mu = dots.mean()
            var = ((dots - mu) ** 2.0).mean()
            xhat = (dots - mu) / ((var + self.eps) ** 0.5)
            if update_stats is None or update_stats:
                m = self.momentum
                batch_var_unbiased = float(var.data) * n / (n - 1)
                self.running_mean = (1 - m) * self.running_mean + m * float(mu.data)
                self.running_var = (1 - m) * self.running_var + m * batch_var_unbiased
        else:
            xhat = (dots - self.running_mean) * (1.0 / np.sqrt(self.running_var + self.eps))
        return xhat * self.gamma + self.beta

    def normalize_array(self, dots: np.ndarray) -> np.ndarray:
        """Inference path: the eval-mode affine transform on a plain array."""
        scale = float(self.gamma.data) / np.sqrt(self.running_var + self.eps)
        return (dots - self.running_mean) * scale + float(self.beta.data)

    def state_dict(self) -> dict:
        return {
            "gamma": float(self.gamma.data),
            "beta": float(self.beta.data),
            "running_mean": self.running_mean,
            "running_var": self.running_var,
            "eps": self.eps,
            "momentum": self.momentum,
            "mode": self.mode.value,
        }

    def load_state_dict(self, state: dict) -> None:
        self.gamma.data = np.asarray(state["gamma"], dtype=self.gamma.data.dtype)
        self.beta.data = np.asarray(state["beta"], dtype=self.beta.data.dtype)
        self.running_mean = float(state["running_mean"])
        self.running_var = float(state["running_var"])
        self.eps = float(state["eps"])
        self.momentum = float(state["momentum"])
        self.mode = HeadMode(state["mode"])


def similarity(head: SimilarityHead, u_a, u_b, update_stats: Optional[bool] = None) -> Tensor:
    """exp(BN(u_a . u_b)) per row of two equal-size batches."""
    a = u_a if isinstance(u_a, Tensor) else Tensor(np.asarray(u_a))
    b = u_b if isinstance(u_b, Tensor) else Tensor(np.asarray(u_b))
    if a.data.shape != b.data.shape:
        raise ValueError("batch shapes differ")
    dots = (a * b).sum(axis=-1)
    return exp(head.normalize(dots, update_stats=update_stats))


def predict_probabilities(head: SimilarityHead, u_s: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """P(candidate | query) as a log-space softmax over BN'd dot products."""
    candidates = np.asarray(candidates)
    if candidates.ndim != 2 or candidates.shape[0] == 0:
        raise EmptyCandidates("need a (C, d) candidate matrix with C >= 1")
    if head.mode != HeadMode.EVAL:
        raise RuntimeError("predict_probabilities requires the head in eval mode")
    z = head.normalize_array(candidates @ np.asarray(u_s))
    z = z - z.max()
    log_p = z - np.log(np.exp(z).sum())
    return np.exp(log_p)


def rank_candidates(
    head: SimilarityHead,
    u_s: np.ndarray,
    cache: "EntityEmbeddingCache",
    k: int,
) -> list[tuple[int, float]]:
    """Top-k (entity index, probability), ties broken by ascending index."""
    cache.check_fresh()
    probs = predict_probabilities(head, u_s, cache.matrix_view())
    order = np.argsort(-probs, kind="stable")[: max(k, 0)]
    return [(int(i), float(probs[i])) for i in order]


class EntityEmbeddingCache:
    """Zeroth-order representations for every entity in the graph."""

    def __init__(
        self,
        matrix: np.ndarray,
        mode: CacheMode = CacheMode.CACHED_STOP_GRAD,
        staleness_bound: Optional[int] = None,
    ):
        matrix = np.asarray(matrix)
        if matrix.ndim != 2:
            raise ValueError("cache matrix must be (|V|, d)")
        self.mode = mode
        self.staleness = 0
        self.staleness_bound = staleness_bound
        if mode == CacheMode.TRAINABLE_TABLE:
            self.table: Optional[Tensor] = Tensor(matrix.copy(), requires_grad=True)
            self._matrix = None
        else:
            self.table = None
            self._matrix = matrix

    @classmethod
    def from_encoder(
        cls,
        model: EncoderModel,
        graph: RelationalGraph,
        mode: CacheMode = CacheMode.CACHED_STOP_GRAD,
        staleness_bound: Optional[int] = None,
    ) -> "EntityEmbeddingCache":
        return cls(_encode_all_entities(model, graph), mode=mode, staleness_bound=staleness_bound)

    def candidates(self) -> Tensor:
        """Candidate matrix for loss denominators.

        Stop-grad mode returns a constant wrapper, so no gradient can flow
        into cached rows; table mode returns the trainable parameter.
        """
        if self.mode == CacheMode.TRAINABLE_TABLE:
            return self.table
        return Tensor(self._matrix)

    def matrix_view(self) -> np.ndarray:
        return self.table.data if self.mode == CacheMode.TRAINABLE_TABLE else self._matrix

    def tick(self, steps: int = 1) -> None:
        self.staleness += steps

    def check_fresh(self) -> None:
        if (
            self.mode == CacheMode.CACHED_STOP_GRAD
            and self.staleness_bound is not None
            and self.staleness > self.staleness_bound
        ):
            raise StaleCache(f"cache staleness {self.staleness} exceeds bound {self.staleness_bound}")

    def to_trainable_table(self) -> None:
        """Switch to the few-shot configuration, seeding the table from the
        current cached rows."""
        if self.mode == CacheMode.TRAINABLE_TABLE:
            return
        self.table = Tensor(self._matrix.copy(), requires_grad=True)
        self._matrix = None
        self.mode = CacheMode.TRAINABLE_TABLE
        self.staleness = 0

    def dump(self, path) -> None:
        matrix = np.ascontiguousarray(self.matrix_view(), dtype=np.float64)
        payload = matrix.tobytes()
        header = struct.pack("<8sqqI", _CACHE_MAGIC, matrix.shape[0], matrix.shape[1], zlib.crc32(payload))
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload)

    @classmethod
    def load(cls, path, mode: CacheMode = CacheMode.CACHED_STOP_GRAD) -> "EntityEmbeddingCache":
        with open(path, "rb") as fh:
            header = fh.read(struct.calcsize("<8sqqI"))
            magic, rows, cols, crc = struct.unpack("<8sqqI", header)
            if magic != _CACHE_MAGIC:
                raise ValueError("not a cache file")
            payload = fh.read()
        if zlib.crc32(payload) != crc:
            raise ValueError("cache checksum mismatch")
        matrix = np.frombuffer(payload, dtype=np.float64).reshape(rows, cols).copy()
        return cls(matrix, mode=mode)


def _encode_all_entities(model: EncoderModel, graph: RelationalGraph, chunk: int = 64) -> np.ndarray:
    d = model.config.d_model
    out = np.zeros((len(graph), d), dtype=model.config.np_dtype)
    with no_grad():
        for start in range(0, len(graph), chunk):
            insts = [
                render_t0(graph.phrase(i), target=i)
                for i in range(start, min(start + chunk, len(graph)))
            ]
            reps, _ = model.encode_batch(insts)
            out[start : start + len(insts)] = reps.data
    return out


def refresh_cache(
    cache: EntityEmbeddingCache,
    model: EncoderModel,
    graph: RelationalGraph,
    period: Optional[int] = 1,
) -> EntityEmbeddingCache:
    """Re-encode every entity if the cache is at least ``period`` steps stale.

    ``period=None`` means never refresh; ``period=0`` forces one.
    """
    if cache.mode != CacheMode.CACHED_STOP_GRAD:
        raise ValueError("refresh only applies to the stop-gradient cache")
    if period is None:
        return cache
    if cache.staleness >= period:
        cache._matrix = _encode_all_entities(model, graph)
        cache.staleness = 0
    return cache
