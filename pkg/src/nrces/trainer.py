"""Training loop, learning curves, probes, and the multi-run experiments."""

from __future__ import annotations

import csv
import logging
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import losses
from .data import Sentence, enumerate_spans, label_set, mask_entities, sample_negatives
from .errors import ConfigError, InvalidInputError, NumericError, SpanTooLongError
from .evaluator import decode_corpus, score
from .losses import LossVariant
from .model import (
    AdamState,
    ModelParams,
    SpanBatch,
    Vocabulary,
    backward,
    encode_tokens,
    forward,
    forward_batch,
    span_representation,
    step,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Probe:
    """A span whose entity probability is traced every epoch."""

    sentence_id: int
    begin: int
    end: int
    source: str = "train"  # or "dev"

    @property
    def key(self) -> str:
        prefix = "" if self.source == "train" else self.source
        return f"probe_{prefix}{self.sentence_id}_{self.begin}_{self.end}"

    @classmethod
    def parse(cls, text: str) -> "Probe":
        """``[dev:]sentence:begin:end``"""
        parts = text.split(":")
        source = "train"
        if parts and parts[0] in ("train", "dev"):
            source = parts.pop(0)
        if len(parts) != 3:
            raise ConfigError(f"probe must look like [dev:]sentence:begin:end, got {text!r}")
        sid, b, e = map(int, parts)
        return cls(sid, b, e, source)


@dataclass
class TrainConfig:
    variant: str = LossVariant.NRCES.value
    w: float = 5.0
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 5e-4
    max_width: int = 10
    negative_keep_rate: float = 0.5
    resample_per_epoch: bool = False
    model_seed: int = 1
    mask_seed: int = 1
    sample_seed: int = 1
    dim: int = 50
    width_dim: int = 10
    hidden: int = 64
    select: str = "final"  # or "best-dev"
    threshold: float | None = None
    probes: tuple[Probe, ...] = ()

    def validate(self) -> "TrainConfig":
        LossVariant.parse(self.variant)
        if not self.w > 0:
            raise ConfigError(f"w must be positive, got {self.w}")
        if self.epochs < 0 or self.batch_size < 1 or self.max_width < 1:
            raise ConfigError("epochs >= 0, batch_size >= 1 and max_width >= 1 required")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 < self.negative_keep_rate <= 1.0:
            raise ConfigError("negative_keep_rate must lie in (0, 1]")
        if self.select not in ("final", "best-dev"):
            raise ConfigError(f"select must be 'final' or 'best-dev', got {self.select!r}")
        if self.threshold is not None and not 0.0 <= self.threshold <= 1.0:
            raise ConfigError("threshold must lie in [0, 1]")
        return self

    @property
    def loss_variant(self) -> LossVariant:
        return LossVariant.parse(self.variant)

    @property
    def effective_keep_rate(self) -> float:
        # The no-sampling ablation trains on every negative.
        if self.loss_variant is LossVariant.NRCES_NO_SAMPLING:
            return 1.0
        return self.negative_keep_rate

    def to_dict(self) -> dict:
        d = asdict(self)
        d["probes"] = [asdict(p) for p in self.probes]
        return d


@dataclass
class CurvePoint:
    epoch: int
    beta: float
    train_loss: float
    dev_p: float
    dev_r: float
    dev_f1: float
    probes: dict[str, float] = field(default_factory=dict)
    probe_dists: dict[str, list[float]] = field(default_factory=dict)


@dataclass
class TrainingSet:
    """Retained span samples as parallel arrays."""

    batch: SpanBatch
    labels: np.ndarray
    sentence_ids: np.ndarray
    spans: np.ndarray  # (N, 2) begin/end

    def __len__(self):
        return len(self.labels)

    @property
    def n_positive(self) -> int:
        return int(np.count_nonzero(self.labels))


@dataclass
class TrainResult:
    params: ModelParams
    curve: list[CurvePoint]
    vocab: Vocabulary
    labels: list[str]
    n_samples: int = 0
    best_epoch: int | None = None

    @property
    def final_f1(self) -> float:
        return self.curve[-1].dev_f1 if self.curve else 0.0


def build_training_set(corpus: Sequence[Sentence], vocab: Vocabulary, labels, max_width: int, keep_rate: float, seed: int) -> TrainingSet:
    samples = []
    for sid, sent in enumerate(corpus):
        samples.extend(enumerate_spans(sent, max_width, labels, sid))
    kept = sample_negatives(samples, keep_rate, seed)
    ids = [vocab.ids(s.tokens) for s in corpus]
    bids = np.array([ids[s.sentence_id][s.begin - 1] for s in kept], dtype=np.int64)
    eids = np.array([ids[s.sentence_id][s.end - 1] for s in kept], dtype=np.int64)
    widths = np.array([s.width for s in kept], dtype=np.int64)
    return TrainingSet(
        SpanBatch(bids, eids, widths),
        np.array([s.label for s in kept], dtype=np.int64),
        np.array([s.sentence_id for s in kept], dtype=np.int64),
        np.array([(s.begin, s.end) for s in kept], dtype=np.int64).reshape(-1, 2),
    )


def probe_entity_probability(params: ModelParams, vocab: Vocabulary, sentence: Sentence, span: tuple[int, int]):
    """``1 - p(NONE)`` for one span, plus the full class distribution."""
    b, e = span
    if e - b + 1 > params.max_width:
        raise SpanTooLongError(f"probe span {span} wider than {params.max_width}")
    h = encode_tokens(vocab.ids(sentence.tokens), params)
    p = losses.softmax(forward(span_representation(h, span, params), params))
    return float(1.0 - p[0]), p


def _evaluate(params, vocab, labels, corpus, cfg: TrainConfig):
    preds = decode_corpus(params, vocab, labels, corpus, cfg.threshold, cfg.max_width)
    return score(corpus, preds)


def train(
    train_corpus: Sequence[Sentence],
    dev_corpus: Sequence[Sentence],
    cfg: TrainConfig,
    vocab: Vocabulary | None = None,
    labels: Sequence[str] | None = None,
    on_batch: Callable | None = None,
) -> TrainResult:
    """Train one model and record a curve point after every epoch.

    ``on_batch(epoch, beta, targets, logits, dlogits)`` is called for every
    minibatch when given; it exists for instrumentation.
    """
    cfg.validate()
    if not train_corpus or not dev_corpus:
        raise InvalidInputError("train and dev corpora must be non-empty")
    vocab = vocab or Vocabulary.from_corpus(train_corpus)
    labels = list(labels or label_set(list(train_corpus) + list(dev_corpus)))
    variant = cfg.loss_variant

    params = ModelParams.init(
        len(vocab), len(labels), dim=cfg.dim, width_dim=cfg.width_dim,
        hidden=cfg.hidden, max_width=cfg.max_width, seed=cfg.model_seed,
    )
    opt = AdamState.for_params(params, lr=cfg.learning_rate)
    data = build_training_set(train_corpus, vocab, labels, cfg.max_width, cfg.effective_keep_rate, cfg.sample_seed)
    if len(data) == 0:
        raise InvalidInputError("no training samples")
    probe_sents = {"train": train_corpus, "dev": dev_corpus}

    curve: list[CurvePoint] = []
    best, best_f1, best_epoch = None, -1.0, None
    for epoch in range(cfg.epochs):
        b = losses.beta(epoch, cfg.w)
        if cfg.resample_per_epoch and epoch > 0:
            data = build_training_set(
                train_corpus, vocab, labels, cfg.max_width, cfg.effective_keep_rate, cfg.sample_seed ^ epoch
            )
        order = np.random.default_rng(cfg.model_seed ^ epoch).permutation(len(data))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = data.batch.take(idx)
            targets = data.labels[idx]
            cache = forward_batch(params, batch)
            try:
                batch_losses, dlogits = losses.batch_loss_grad(cache.logits, targets, b, variant)
            except InvalidInputError as exc:
                raise NumericError(f"epoch {epoch}: non-finite logits near sample {int(idx[0])}: {exc}") from exc
            if not np.all(np.isfinite(batch_losses)):
                bad = int(idx[np.flatnonzero(~np.isfinite(batch_losses))[0]])
                raise NumericError(f"epoch {epoch}: non-finite loss for sample {bad}")
            if on_batch is not None:
                on_batch(epoch, b, targets, cache.logits, dlogits)
            grads = backward(params, batch, cache, dlogits)
            step(params, grads, opt)
            total += float(batch_losses.sum())

        report = _evaluate(params, vocab, labels, dev_corpus, cfg)
        point = CurvePoint(epoch, b, total / len(data), report.precision, report.recall, report.f1)
        for probe in cfg.probes:
            sent = probe_sents[probe.source][probe.sentence_id]
            prob, dist = probe_entity_probability(params, vocab, sent, (probe.begin, probe.end))
            point.probes[probe.key] = prob
            point.probe_dists[probe.key] = dist.tolist()
        curve.append(point)
        log.info("epoch %d beta=%.4f loss=%.4f dev_f1=%.2f", epoch, b, point.train_loss, point.dev_f1)
        if cfg.select == "best-dev" and report.f1 > best_f1:
            best, best_f1, best_epoch = params.copy(), report.f1, epoch

    if cfg.select == "best-dev" and best is not None:
        params = best
    return TrainResult(params, curve, vocab, labels, len(data), best_epoch)


def curve_header(probes: Sequence[Probe]) -> list[str]:
    return ["epoch", "beta", "train_loss", "dev_p", "dev_r", "dev_f1", *(p.key for p in probes)]


def write_curve_csv(curve: Sequence[CurvePoint], probes: Sequence[Probe], path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(curve_header(probes))
        for pt in curve:
            writer.writerow(
                [pt.epoch, repr(pt.beta), repr(pt.train_loss), repr(pt.dev_p), repr(pt.dev_r), repr(pt.dev_f1)]
                + [repr(pt.probes[p.key]) for p in probes]
            )


def unseen_masked_probes(masked_corpus: Sequence[Sentence], manifest: Sequence[dict]) -> list[Probe]:
    """Masked mentions whose (first token, last token, width) never occurs as a
    surviving positive, in manifest order.

    A context-free model sees such a span only as a negative, so its trace
    shows how the loss treats an unlabeled entity with no positive evidence
    for that exact form.
    """
    seen = {(s.tokens[b - 1], s.tokens[e - 1], e - b + 1) for s in masked_corpus for b, e, _ in s.entities}
    out = []
    for row in manifest:
        sid = row["sentence"]
        toks = masked_corpus[sid].tokens
        for b, e, _ in row["masked"]:
            if (toks[b - 1], toks[e - 1], e - b + 1) not in seen:
                out.append(Probe(sid, b, e))
    return out


# -- multi-run experiments -----------------------------------------------------


def _run_job(job):
    key, train_corpus, dev_corpus, cfg = job
    res = train(train_corpus, dev_corpus, cfg)
    return key, res.final_f1, [asdict(p) for p in res.curve]


def _run_jobs(jobs, n_workers: int):
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]
    return {key: (f1, curve) for key, f1, curve in results}


def _mean_std(values):
    mean = statistics.fmean(values)
    std = statistics.stdev(values) if len(values) > 1 else 0.0
    return mean, std


def run_ablation_matrix(train_corpus, dev_corpus, base: TrainConfig, variants, seeds, jobs: int = 1, keep_curves: bool = False) -> dict:
    """Train every variant under every seed; seed ``s`` drives both the model
    initialisation and negative sampling, identically across variants."""
    variants = [LossVariant.parse(v) for v in variants]
    seeds = [int(s) for s in seeds]
    if not variants:
        raise ConfigError("at least one variant required")
    if len(seeds) < 2:
        raise ConfigError("ablation needs at least two seeds")
    work = [
        ((v.value, i), train_corpus, dev_corpus, replace(base, variant=v.value, model_seed=s, sample_seed=s))
        for v in variants
        for i, s in enumerate(seeds)
    ]
    done = _run_jobs(work, jobs)
    rows = []
    for v in variants:
        f1s = [done[(v.value, i)][0] for i in range(len(seeds))]
        mean, std = _mean_std(f1s)
        row = {"variant": v.value, "seeds": seeds, "f1": f1s, "mean_f1": mean, "std_f1": std, "median_f1": statistics.median(f1s)}
        if keep_curves:
            row["curves"] = [done[(v.value, i)][1] for i in range(len(seeds))]
        rows.append(row)
    return {"config": base.to_dict(), "rows": rows}


def run_w_sweep(train_corpus, dev_corpus, base: TrainConfig, w_values, mask_probs, seeds=None, jobs: int = 1) -> dict:
    """Mask the clean training corpus at each probability and train NRCES for each w."""
    w_values = [float(w) for w in w_values]
    mask_probs = [float(p) for p in mask_probs]
    if not w_values or not mask_probs:
        raise ConfigError("w grid and mask grid must be non-empty")
    seeds = [int(s) for s in (seeds or [base.model_seed])]
    masked = {p: mask_entities(train_corpus, p, base.mask_seed)[0] for p in mask_probs}
    work = [
        ((w, p, i), masked[p], dev_corpus, replace(base, variant=LossVariant.NRCES.value, w=w, model_seed=s, sample_seed=s))
        for p in mask_probs
        for w in w_values
        for i, s in enumerate(seeds)
    ]
    done = _run_jobs(work, jobs)
    cells = []
    for p in mask_probs:
        for w in w_values:
            f1s = [done[(w, p, i)][0] for i in range(len(seeds))]
            mean, std = _mean_std(f1s)
            cells.append(
                {"w": w, "mask_prob": p, "seeds": seeds, "f1": f1s, "mean_f1": mean, "std_f1": std, "median_f1": statistics.median(f1s)}
            )
    return {"config": base.to_dict(), "w_values": w_values, "mask_probs": mask_probs, "cells": cells}
