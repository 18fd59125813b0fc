"""Decode span scores into flat entity sets and score them by exact match."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .data import Sentence
from .errors import ConfigError
from .model import ModelParams, SpanBatch, Vocabulary, forward_batch


class Prediction(NamedTuple):
    sentence_id: int
    begin: int
    end: int
    type: str
    confidence: float


@dataclass(frozen=True)
class EvalReport:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return 100.0 * self.tp / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return 100.0 * self.tp / d if d else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": round(self.precision, 2),
            "recall": round(self.recall, 2),
            "f1": round(self.f1, 2),
        }


def _spans(n: int, max_width: int):
    for b in range(1, n + 1):
        for e in range(b, min(n, b + max_width - 1) + 1):
            yield b, e


def span_probabilities(params: ModelParams, vocab: Vocabulary, corpus: Sequence[Sentence], max_width: int | None = None):
    """Softmax over classes for every enumerated span of every sentence.

    Returns ``(index, probs)`` where ``index`` rows are ``(sentence_id, b, e)``.
    """
    max_width = max_width or params.max_width
    index, bids, eids, widths = [], [], [], []
    for sid, sent in enumerate(corpus):
        ids = vocab.ids(sent.tokens)
        for b, e in _spans(len(sent), max_width):
            index.append((sid, b, e))
            bids.append(ids[b - 1])
            eids.append(ids[e - 1])
            widths.append(e - b + 1)
    if not index:
        return np.zeros((0, 3), dtype=np.int64), np.zeros((0, params.n_classes))
    batch = SpanBatch(np.array(bids), np.array(eids), np.array(widths))
    logits = forward_batch(params, batch).logits
    ex = np.exp(logits - logits.max(axis=1, keepdims=True))
    return np.array(index, dtype=np.int64), ex / ex.sum(axis=1, keepdims=True)


def resolve_overlaps(candidates: list[Prediction]) -> list[Prediction]:
    """Greedy flat decoding: highest confidence first, ties to the earlier
    begin and then the shorter span; anything overlapping a winner is dropped."""
    order = sorted(candidates, key=lambda p: (-p.confidence, p.begin, p.end - p.begin))
    taken: dict[int, list[tuple[int, int]]] = {}
    kept = []
    for p in order:
        occupied = taken.setdefault(p.sentence_id, [])
        if any(p.begin <= e and b <= p.end for b, e in occupied):
            continue
        occupied.append((p.begin, p.end))
        kept.append(p)
    return sorted(kept, key=lambda p: (p.sentence_id, p.begin, p.end))


def decode_corpus(
    params: ModelParams,
    vocab: Vocabulary,
    labels: Sequence[str],
    corpus: Sequence[Sentence],
    threshold: float | None = None,
    max_width: int | None = None,
    resolve: bool = True,
) -> list[Prediction]:
    if threshold is not None and not 0.0 <= threshold <= 1.0:
        raise ConfigError(f"threshold must lie in [0, 1], got {threshold}")
    index, probs = span_probabilities(params, vocab, corpus, max_width)
    if len(index) == 0:
        return []
    # np.argmax returns the first maximum, so the non-entity class wins ties.
    best = probs.argmax(axis=1)
    conf = probs[np.arange(len(best)), best]
    keep = best != 0
    if threshold is not None:
        keep &= conf >= threshold
    candidates = [
        Prediction(int(s), int(b), int(e), labels[k], float(c))
        for (s, b, e), k, c in zip(index[keep], best[keep], conf[keep])
    ]
    return resolve_overlaps(candidates) if resolve else candidates


def decode(params, vocab, labels, sentence: Sentence, threshold=None, max_width=None, sentence_id: int = 0):
    preds = decode_corpus(params, vocab, labels, [sentence], threshold, max_width)
    return [p._replace(sentence_id=sentence_id) for p in preds]


def score(gold: Sequence[Sentence] | Sequence[Sequence[tuple]], predictions: Sequence[Prediction]) -> EvalReport:
    """Exact (sentence, begin, end, type) matching."""
    gold_set = set()
    for sid, item in enumerate(gold):
        ents = item.entities if isinstance(item, Sentence) else item
        gold_set.update((sid, int(b), int(e), str(t)) for b, e, t in ents)
    keys = [(p.sentence_id, p.begin, p.end, p.type) for p in predictions]
    pred_set = set(keys)
    if len(pred_set) < len(keys):
        warnings.warn(f"{len(keys) - len(pred_set)} duplicate predictions counted once", stacklevel=2)
    tp = len(gold_set & pred_set)
    return EvalReport(tp=tp, fp=len(pred_set) - tp, fn=len(gold_set) - tp)


def error_listing(gold: Sequence[Sentence], predictions: Sequence[Prediction]) -> list[dict]:
    """Per-sentence false positives and false negatives."""
    by_sent: dict[int, set] = {}
    for p in predictions:
        by_sent.setdefault(p.sentence_id, set()).add((p.begin, p.end, p.type))
    rows = []
    for sid, sent in enumerate(gold):
        g = set(sent.entities)
        pr = by_sent.get(sid, set())
        fp, fn = sorted(pr - g), sorted(g - pr)
        if fp or fn:
            rows.append({"sentence": sid, "fp": [list(x) for x in fp], "fn": [list(x) for x in fn]})
    return rows
