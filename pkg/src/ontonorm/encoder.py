"""Tokenizer, vocabulary, and a small trainable transformer encoder.

The encoder maps a masked template sentence to a dense vector at each
mask position. It is intentionally tiny (a couple of pre-norm attention
blocks over learned token + position embeddings) so that a full training
run fits in minutes on a laptop, while the readout at a mask still
depends on the whole sentence.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .autodiff import Tensor, layer_norm, matmul, no_grad, reshape, softmax, swapaxes, take, tanh

CLS_TOKEN = "[CLS]"
SEP_TOKEN = "[SEP]"
MASK_TOKEN = "[MASK]"
UNK_TOKEN = "[UNK]"
PAD_TOKEN = "[PAD]"
SPECIAL_TOKENS = (CLS_TOKEN, SEP_TOKEN, MASK_TOKEN, UNK_TOKEN, PAD_TOKEN)
CLS_ID, SEP_ID, MASK_ID, UNK_ID, PAD_ID = range(5)

_SPECIAL_SET = frozenset(SPECIAL_TOKENS)
_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

CHECKPOINT_VERSION = 1


class EmptyCorpus(ValueError):
    """build_vocab was given no text."""


class TooLong(ValueError):
    """A prompt instance exceeds the encoder's maximum sequence length."""


def tokenize(text: str) -> list[str]:
    """Lowercased whitespace + punctuation tokenization.

    Bracketed special tokens survive intact; everything else is
    lowercased and punctuation becomes its own token.
    """
    out: list[str] = []
    for piece in text.split():
        if piece in _SPECIAL_SET:
            out.append(piece)
        else:
            out.extend(_TOKEN_RE.findall(piece.lower()))
    return out


class Vocabulary:
    """token -> id map with the five reserved specials at ids 0-4."""

    def __init__(self, tokens: Sequence[str]):
        self.id_to_token: list[str] = list(SPECIAL_TOKENS) + list(tokens)
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def encode(self, tokens: Sequence[str]) -> list[int]:
        get = self.token_to_id.get
        return [get(t, UNK_ID) for t in tokens]

    def to_json(self) -> str:
        return json.dumps({"tokens": self.id_to_token[len(SPECIAL_TOKENS):]}, ensure_ascii=False)

    @classmethod
    def from_json(cls, payload: str) -> "Vocabulary":
        return cls(json.loads(payload)["tokens"])


def build_vocab(corpus: Iterable[str], min_count: int = 1) -> Vocabulary:
    """Count tokens over the corpus and keep those seen >= min_count times.

    Ordering is frequency-descending then lexicographic, so two builds of
    the same corpus serialize byte-identically.
    """
    counts: Counter[str] = Counter()
    empty = True
    for text in corpus:
        empty = False
        counts.update(t for t in tokenize(text) if t not in _SPECIAL_SET)
    if empty:
        raise EmptyCorpus("corpus contains no text")
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary(kept)


@dataclass
class EncoderConfig:
    depth: int = 2
    d_model: int = 64
    n_heads: int = 2
    d_ff: int = 128
    max_len: int = 64
    dtype: str = "float64"

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


class EncoderModel:
    """Token/position embeddings + pre-norm attention blocks + final norm."""

    def __init__(self, vocab: Vocabulary, config: EncoderConfig | None = None, seed: int = 0):
        self.vocab = vocab
        self.config = config or EncoderConfig()
        self.params: dict[str, Tensor] = {}
        self._init_params(np.random.default_rng(seed))

    def _init_params(self, rng: np.random.Generator) -> None:
        cfg = self.config
        dt = cfg.np_dtype
        p = self.params

        def par(name: str, data: np.ndarray) -> None:
            p[name] = Tensor(data, requires_grad=True)

        par("tok_emb", rng.uniform(-0.05, 0.05, size=(len(self.vocab), cfg.d_model)).astype(dt))
        par("pos_emb", rng.uniform(-0.05, 0.05, size=(cfg.max_len, cfg.d_model)).astype(dt))
        for i in range(cfg.depth):
            for w in ("wq", "wk", "wv", "wo"):
                par(f"blk{i}.{w}", _glorot(rng, cfg.d_model, cfg.d_model, dt))
                par(f"blk{i}.{w}_b", np.zeros(cfg.d_model, dtype=dt))
            par(f"blk{i}.ln1_g", np.ones(cfg.d_model, dtype=dt))
            par(f"blk{i}.ln1_b", np.zeros(cfg.d_model, dtype=dt))
            par(f"blk{i}.w1", _glorot(rng, cfg.d_model, cfg.d_ff, dt))
            par(f"blk{i}.w1_b", np.zeros(cfg.d_ff, dtype=dt))
            par(f"blk{i}.w2", _glorot(rng, cfg.d_ff, cfg.d_model, dt))
            par(f"blk{i}.w2_b", np.zeros(cfg.d_model, dtype=dt))
            par(f"blk{i}.ln2_g", np.ones(cfg.d_model, dtype=dt))
            par(f"blk{i}.ln2_b", np.zeros(cfg.d_model, dtype=dt))
        par("ln_f_g", np.ones(cfg.d_model, dtype=dt))
        par("ln_f_b", np.zeros(cfg.d_model, dtype=dt))

    def forward(self, ids: np.ndarray, real_mask: np.ndarray) -> Tensor:
        """ids: (B, T) int token ids; real_mask: (B, T) bool, True on real tokens.

        Returns the (B, T, d) hidden states after the final layer norm.
        Padded query rows produce values that callers must not read.
        """
        cfg = self.config
        p = self.params
        nb, nt = ids.shape
        hd = cfg.d_model // cfg.n_heads

        x = reshape(take(p["tok_emb"], ids.reshape(-1)), (nb, nt, cfg.d_model))
        x = x + take(p["pos_emb"], np.arange(nt))

        att_bias = np.where(real_mask[:, None, None, :], 0.0, -1e9).astype(cfg.np_dtype)
        scale = 1.0 / np.sqrt(hd)

        def heads(t: Tensor) -> Tensor:
            return swapaxes(reshape(t, (nb, nt, cfg.n_heads, hd)), 1, 2)

        for i in range(cfg.depth):
            h = layer_norm(x, p[f"blk{i}.ln1_g"], p[f"blk{i}.ln1_b"])
            q = heads(matmul(h, p[f"blk{i}.wq"]) + p[f"blk{i}.wq_b"])
            k = heads(matmul(h, p[f"blk{i}.wk"]) + p[f"blk{i}.wk_b"])
            v = heads(matmul(h, p[f"blk{i}.wv"]) + p[f"blk{i}.wv_b"])
            scores = matmul(q, swapaxes(k, -1, -2)) * scale + att_bias
            ctx = matmul(softmax(scores, axis=-1), v)
            ctx = reshape(swapaxes(ctx, 1, 2), (nb, nt, cfg.d_model))
            x = x + matmul(ctx, p[f"blk{i}.wo"]) + p[f"blk{i}.wo_b"]

            h2 = layer_norm(x, p[f"blk{i}.ln2_g"], p[f"blk{i}.ln2_b"])
            ff = matmul(tanh(matmul(h2, p[f"blk{i}.w1"]) + p[f"blk{i}.w1_b"]), p[f"blk{i}.w2"])
            x = x + ff + p[f"blk{i}.w2_b"]

        return layer_norm(x, p["ln_f_g"], p["ln_f_b"])

    def encode_batch(self, instances: Sequence) -> tuple[Tensor, list[tuple[int, int]]]:
        """Encode prompt instances and gather mask-slot representations.

        Each instance needs ``tokens`` and ``mask_slots`` attributes; slots
        whose target is the IGNORED sentinel are computed but not gathered.
        Returns the (M, d) slot matrix plus (instance index, slot index)
        owners aligned with its rows.
        """
        from .templates import IGNORED  # local import to avoid a cycle

        cfg = self.config
        lengths = [len(inst.tokens) for inst in instances]
        if max(lengths) > cfg.max_len:
            raise TooLong(f"instance of length {max(lengths)} exceeds max_len={cfg.max_len}")
        nt = max(lengths)
        nb = len(instances)

        ids = np.full((nb, nt), PAD_ID, dtype=np.int64)
        real = np.zeros((nb, nt), dtype=bool)
        for b, inst in enumerate(instances):
            ids[b, : lengths[b]] = self.vocab.encode(inst.tokens)
            real[b, : lengths[b]] = True

        hidden = self.forward(ids, real)
        flat = reshape(hidden, (nb * nt, cfg.d_model))

        rows: list[int] = []
        owners: list[tuple[int, int]] = []
        for b, inst in enumerate(instances):
            for s, (pos, target) in enumerate(inst.mask_slots):
                if target == IGNORED:
                    continue
                rows.append(b * nt + pos)
                owners.append((b, s))
        return take(flat, np.array(rows, dtype=np.int64)), owners

    # persistence -------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.params.items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self.params.items():
            if name not in arrays:
                raise KeyError(f"checkpoint missing parameter {name}")
            if arrays[name].shape != t.data.shape:
                raise ValueError(f"shape mismatch for {name}")
            t.data = arrays[name].astype(self.config.np_dtype)

    def save(self, path) -> None:
        meta = {
            "checkpoint_version": CHECKPOINT_VERSION,
            "config": asdict(self.config),
            "vocab": self.vocab.to_json(),
        }
        np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8),
                 **{f"param:{k}": v for k, v in self.state_arrays().items()})

    @classmethod
    def load(cls, path) -> "EncoderModel":
        with np.load(path) as z:
            meta = json.loads(bytes(z["__meta__"]).decode("utf-8"))
            if meta.get("checkpoint_version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta.get('checkpoint_version')}")
            model = cls(Vocabulary.from_json(meta["vocab"]), EncoderConfig(**meta["config"]))
            model.load_state_arrays({k[len("param:"):]: z[k] for k in z.files if k.startswith("param:")})
        return model


def encode(model: EncoderModel, instance) -> list[np.ndarray]:
    """Dense representation at each non-ignored mask slot, in slot order."""
    with no_grad():
        reps, _ = model.encode_batch([instance])
    return [row.copy() for row in reps.data]
