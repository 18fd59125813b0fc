"""Span classifier: embedding lookup encoder, endpoint-plus-width span
representation, one-hidden-layer ReLU scorer, manual backprop and Adam."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidInputError, NumericError, SpanTooLongError

UNK = "<unk>"
FORMAT_VERSION = 1


class Vocabulary:
    """Token <-> id mapping with a reserved unknown-token id 0."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = [UNK]
        self.stoi: dict[str, int] = {UNK: 0}
        for tok in tokens:
            self.add(tok)

    @classmethod
    def from_corpus(cls, corpus) -> "Vocabulary":
        # Sorted so the id assignment does not depend on sentence order.
        return cls(sorted({tok for sent in corpus for tok in sent.tokens}))

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def ids(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self.stoi.get(t, 0) for t in tokens], dtype=np.int64)

    def __len__(self):
        return len(self.itos)


@dataclass
class ModelParams:
    token_embeddings: np.ndarray  # (V, d)
    width_embeddings: np.ndarray  # (L, d_w); row k-1 holds width k
    hidden_weights: np.ndarray  # (2d + d_w, H)
    hidden_bias: np.ndarray  # (H,)
    output_weights: np.ndarray  # (H, C)
    output_bias: np.ndarray  # (C,)

    def __post_init__(self):
        self.flat = None  # contiguous buffer the arrays view into, when allocated that way
        v, d = self.token_embeddings.shape
        _, dw = self.width_embeddings.shape
        rep, h = self.hidden_weights.shape
        h2, c = self.output_weights.shape
        if rep != 2 * d + dw or h2 != h or self.hidden_bias.shape != (h,) or self.output_bias.shape != (c,):
            raise InvalidInputError(f"inconsistent parameter shapes: {self.shapes()}")

    @classmethod
    def allocate(cls, shapes: dict) -> "ModelParams":
        """Zero parameters whose arrays are views into one flat buffer."""
        names = [f.name for f in fields(cls)]
        sizes = [int(np.prod(shapes[k])) for k in names]
        flat = np.zeros(sum(sizes))
        arrays, offset = {}, 0
        for k, size in zip(names, sizes):
            arrays[k] = flat[offset : offset + size].reshape(shapes[k])
            offset += size
        out = cls(**arrays)
        out.flat = flat
        return out

    @classmethod
    def from_arrays(cls, **arrays) -> "ModelParams":
        out = cls.allocate({k: np.shape(a) for k, a in arrays.items()})
        for k, a in arrays.items():
            getattr(out, k)[...] = a
        return out

    @classmethod
    def init(cls, vocab_size, n_classes, *, dim=50, width_dim=10, hidden=64, max_width=10, seed=0, scale=0.1):
        rng = np.random.default_rng(seed)

        def u(*shape):
            return rng.uniform(-scale, scale, size=shape)

        return cls.from_arrays(
            token_embeddings=u(vocab_size, dim),
            width_embeddings=u(max_width, width_dim),
            hidden_weights=u(2 * dim + width_dim, hidden),
            hidden_bias=np.zeros(hidden),
            output_weights=u(hidden, n_classes),
            output_bias=np.zeros(n_classes),
        )

    @classmethod
    def zeros_like(cls, other: "ModelParams") -> "ModelParams":
        return cls.allocate(other.shapes())

    def items(self):
        return ((f.name, getattr(self, f.name)) for f in fields(self))

    def copy(self) -> "ModelParams":
        return ModelParams.from_arrays(**dict(self.items()))

    def shapes(self) -> dict:
        return {k: a.shape for k, a in self.items()}

    @property
    def max_width(self) -> int:
        return self.width_embeddings.shape[0]

    @property
    def n_classes(self) -> int:
        return self.output_bias.shape[0]

    def is_finite(self) -> bool:
        if self.flat is not None:
            return bool(np.isfinite(self.flat).all())
        return all(np.all(np.isfinite(a)) for _, a in self.items())


def encode_tokens(token_ids: Sequence[int], params: ModelParams) -> np.ndarray:
    """Context-free encoder: ``h_i`` is the embedding row of token ``i``."""
    token_ids = np.asarray(token_ids, dtype=np.int64)
    if token_ids.size == 0:
        raise InvalidInputError("cannot encode an empty sentence")
    return params.token_embeddings[token_ids]


def span_representation(h: np.ndarray, span: tuple[int, int], params: ModelParams) -> np.ndarray:
    """``[h_begin; h_end; width_row]`` for a 1-based inclusive span."""
    b, e = span
    n = h.shape[0]
    if not 1 <= b <= e <= n:
        raise InvalidInputError(f"span {span} invalid for sentence of length {n}")
    width = e - b + 1
    if width > params.max_width:
        raise SpanTooLongError(f"span width {width} exceeds limit {params.max_width}")
    return np.concatenate([h[b - 1], h[e - 1], params.width_embeddings[width - 1]])


def forward(span_rep: np.ndarray, params: ModelParams) -> np.ndarray:
    """Logits for one representation, or for a stacked ``(N, rep)`` batch."""
    hidden = np.maximum(span_rep @ params.hidden_weights + params.hidden_bias, 0.0)
    return hidden @ params.output_weights + params.output_bias


@dataclass
class SpanBatch:
    """Spans reduced to what the context-free representation depends on."""

    begin_ids: np.ndarray
    end_ids: np.ndarray
    widths: np.ndarray  # 1-based token counts

    def __len__(self):
        return len(self.widths)

    def take(self, idx) -> "SpanBatch":
        return SpanBatch(self.begin_ids[idx], self.end_ids[idx], self.widths[idx])


@dataclass
class ForwardCache:
    reps: np.ndarray
    pre: np.ndarray
    hidden: np.ndarray
    logits: np.ndarray = field(repr=False)


def batch_representations(params: ModelParams, batch: SpanBatch) -> np.ndarray:
    if np.any(batch.widths < 1) or np.any(batch.widths > params.max_width):
        raise SpanTooLongError(f"batch contains widths outside [1, {params.max_width}]")
    emb = params.token_embeddings
    return np.concatenate(
        [emb[batch.begin_ids], emb[batch.end_ids], params.width_embeddings[batch.widths - 1]],
        axis=1,
    )


def forward_batch(params: ModelParams, batch: SpanBatch) -> ForwardCache:
    reps = batch_representations(params, batch)
    pre = reps @ params.hidden_weights + params.hidden_bias
    hidden = np.maximum(pre, 0.0)
    logits = hidden @ params.output_weights + params.output_bias
    return ForwardCache(reps, pre, hidden, logits)


def backward(params: ModelParams, batch: SpanBatch, cache: ForwardCache, dlogits: np.ndarray) -> ModelParams:
    """Gradient of the mean batch loss, given per-sample logit gradients.

    Embedding rows not touched by the batch get exactly zero gradient.
    """
    n = len(batch)
    if n == 0:
        raise InvalidInputError("empty batch")
    if dlogits.shape != cache.logits.shape:
        raise InvalidInputError(f"dlogits shape {dlogits.shape} != logits shape {cache.logits.shape}")
    g = dlogits / n
    d = params.token_embeddings.shape[1]
    out = ModelParams.allocate(params.shapes())

    np.matmul(cache.hidden.T, g, out=out.output_weights)
    out.output_bias[...] = g.sum(axis=0)
    d_pre = g @ params.output_weights.T
    d_pre *= cache.pre > 0
    np.matmul(cache.reps.T, d_pre, out=out.hidden_weights)
    out.hidden_bias[...] = d_pre.sum(axis=0)
    d_rep = d_pre @ params.hidden_weights.T

    np.add.at(
        out.token_embeddings,
        np.concatenate([batch.begin_ids, batch.end_ids]),
        np.concatenate([d_rep[:, :d], d_rep[:, d : 2 * d]]),
    )
    np.add.at(out.width_embeddings, batch.widths - 1, d_rep[:, 2 * d :])
    return out


@dataclass
class AdamState:
    m: ModelParams
    v: ModelParams
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0

    @classmethod
    def for_params(cls, params: ModelParams, lr: float = 5e-4, **kw) -> "AdamState":
        return cls(ModelParams.zeros_like(params), ModelParams.zeros_like(params), lr=lr, **kw)


def _adam_update(p, g, m, v, lr, b1, b2, eps, corr1, corr2):
    # lr * mhat / (sqrt(vhat) + eps), rearranged to save passes over the buffer.
    tmp = g * g
    tmp *= 1.0 - b2
    v *= b2
    v += tmp
    np.multiply(g, 1.0 - b1, out=tmp)
    m *= b1
    m += tmp
    root = np.sqrt(corr2)
    np.sqrt(v, out=tmp)
    tmp += eps * root
    np.divide(m, tmp, out=tmp)
    tmp *= lr * root / corr1
    p -= tmp


def step(params: ModelParams, grads: ModelParams, state: AdamState) -> tuple[ModelParams, AdamState]:
    """One Adam update, applied in place; returns ``(params, state)``."""
    if params.shapes() != grads.shapes():
        raise InvalidInputError("gradient shapes do not match parameter shapes")
    if not grads.is_finite():
        bad = {k: int(np.count_nonzero(~np.isfinite(g))) for k, g in grads.items() if not np.isfinite(g).all()}
        raise NumericError(f"non-finite gradient at step {state.t + 1}: {bad}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    hyper = (state.lr, b1, b2, state.eps, 1.0 - b1**state.t, 1.0 - b2**state.t)
    flats = (params.flat, grads.flat, state.m.flat, state.v.flat)
    if all(f is not None for f in flats):
        _adam_update(*flats, *hyper)
    else:
        for name, g in grads.items():
            _adam_update(getattr(params, name), g, getattr(state.m, name), getattr(state.v, name), *hyper)
    if not params.is_finite():
        raise NumericError(f"parameters became non-finite at step {state.t}")
    return params, state


def save_checkpoint(path, params: ModelParams, vocab: Vocabulary, labels: Sequence[str], extra: dict | None = None):
    doc = {
        "format_version": FORMAT_VERSION,
        "dims": {
            "vocab_size": params.token_embeddings.shape[0],
            "dim": params.token_embeddings.shape[1],
            "width_dim": params.width_embeddings.shape[1],
            "max_width": params.max_width,
            "hidden": params.hidden_bias.shape[0],
            "n_classes": params.n_classes,
        },
        "vocabulary": vocab.itos,
        "labels": list(labels),
        "params": {k: a.tolist() for k, a in params.items()},
    }
    if extra:
        doc["meta"] = extra
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> tuple[ModelParams, Vocabulary, list[str]]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != FORMAT_VERSION:
        raise InvalidInputError(f"unsupported checkpoint format_version {doc.get('format_version')!r}")
    params = ModelParams.from_arrays(**{k: np.asarray(v, dtype=np.float64) for k, v in doc["params"].items()})
    vocab = Vocabulary(doc["vocabulary"][1:])
    if vocab.itos != doc["vocabulary"]:
        raise InvalidInputError("checkpoint vocabulary must start with the unknown token")
    return params, vocab, list(doc["labels"])
