"""Corpora, noise injection, span enumeration and negative sampling.

Entity spans are ``(begin, end, type)`` triples with 1-based inclusive
token indices throughout.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, ConllParseError, InvalidInputError

NONE_LABEL = "NONE"

Entity = tuple[int, int, str]


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[str, ...]
    entities: tuple[Entity, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        ents = tuple(sorted((int(b), int(e), str(t)) for b, e, t in self.entities))
        n = len(self.tokens)
        prev_end = 0
        for b, e, t in ents:
            if not 1 <= b <= e <= n:
                raise InvalidInputError(f"entity {(b, e, t)} out of range for {n} tokens")
            if b <= prev_end:
                raise InvalidInputError(f"overlapping entities in sentence: {ents}")
            prev_end = e
        object.__setattr__(self, "entities", ents)

    def __len__(self):
        return len(self.tokens)

    def to_json(self) -> dict:
        return {"tokens": list(self.tokens), "entities": [list(ent) for ent in self.entities]}

    @classmethod
    def from_json(cls, doc: dict) -> "Sentence":
        return cls(doc["tokens"], [tuple(ent) for ent in doc.get("entities", [])])


@dataclass(frozen=True)
class SpanSample:
    sentence_id: int
    begin: int
    end: int
    label: int
    is_positive: bool

    @property
    def width(self) -> int:
        return self.end - self.begin + 1


def label_set(corpus: Iterable[Sentence]) -> list[str]:
    """``["NONE", *sorted entity types]``; the non-entity class is index 0."""
    types = sorted({t for s in corpus for _, _, t in s.entities})
    return [NONE_LABEL, *types]


# -- CoNLL ---------------------------------------------------------------------


def bio_to_entities(tags: Sequence[str], line_numbers: Sequence[int] | None = None) -> list[Entity]:
    """Decode BIO tags; an I- tag that does not continue its own type opens a new entity."""
    entities = []
    cur = None  # [begin, end, type]
    for i, tag in enumerate(tags, start=1):
        if tag == "O":
            if cur:
                entities.append(tuple(cur))
            cur = None
            continue
        prefix, _, etype = tag.partition("-")
        if prefix not in ("B", "I") or not etype:
            line = line_numbers[i - 1] if line_numbers else None
            raise ConllParseError(f"invalid tag {tag!r}", line)
        if prefix == "I" and cur and cur[2] == etype:
            cur[1] = i
            continue
        if cur:
            entities.append(tuple(cur))
        cur = [i, i, etype]
    if cur:
        entities.append(tuple(cur))
    return entities


def entities_to_bio(n: int, entities: Iterable[Entity]) -> list[str]:
    tags = ["O"] * n
    for b, e, t in entities:
        tags[b - 1] = f"B-{t}"
        for k in range(b, e):
            tags[k] = f"I-{t}"
    return tags


def read_conll(path) -> list[Sentence]:
    corpus = []
    tokens, tags, lines = [], [], []

    def flush():
        if tokens:
            corpus.append(Sentence(tokens, bio_to_entities(tags, lines)))
        tokens.clear(), tags.clear(), lines.clear()

    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                flush()
                continue
            if line.startswith("-DOCSTART-"):
                continue
            cols = line.split()
            if len(cols) < 2:
                raise ConllParseError("expected at least a token and a tag column", line_no)
            tokens.append(cols[0])
            tags.append(cols[-1])
            lines.append(line_no)
    flush()
    return corpus


def write_conll(corpus: Iterable[Sentence], path):
    with open(path, "w", encoding="utf-8") as fh:
        for sent in corpus:
            for tok, tag in zip(sent.tokens, entities_to_bio(len(sent), sent.entities)):
                fh.write(f"{tok} {tag}\n")
            fh.write("\n")


# -- JSON lines ----------------------------------------------------------------


def write_jsonl(rows: Iterable[dict], path):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def read_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_corpus(corpus: Iterable[Sentence], path):
    write_jsonl((s.to_json() for s in corpus), path)


def read_corpus(path) -> list[Sentence]:
    """Load a corpus from JSON lines, or from CoNLL columns for other suffixes."""
    if Path(path).suffix in (".jsonl", ".json"):
        return [Sentence.from_json(d) for d in read_jsonl(path)]
    return read_conll(path)


# -- synthetic corpus ----------------------------------------------------------


@dataclass(frozen=True)
class ToyCorpusSpec:
    """Knobs of the synthetic generator.

    Each entity type owns ``entity_vocab_per_type`` tokens split into four
    roles: single-token entities, and begin / middle / end tokens for longer
    ones.  With entities always separated by filler, the label of a span is a
    function of (begin token, end token, width), so a context-free encoder can
    in principle fit the clean corpus exactly.
    """

    n_sentences: int = 2000
    vocab_size: int = 200
    n_types: int = 2
    min_len: int = 6
    max_len: int = 14
    density: float = 0.2
    max_entity_width: int = 3
    entity_vocab_per_type: int = 30
    seed: int = 0

    def validate(self):
        if self.n_sentences < 0:
            raise ConfigError("n_sentences must be non-negative")
        if self.n_types < 1 or self.min_len < 1 or self.max_len < self.min_len:
            raise ConfigError("need n_types >= 1 and 1 <= min_len <= max_len")
        if not 0.0 <= self.density <= 0.5:
            raise ConfigError(f"density {self.density} too high to keep entities separated (max 0.5)")
        if self.entity_vocab_per_type < 4 or self.max_entity_width < 1:
            raise ConfigError("entity_vocab_per_type must be >= 4 and max_entity_width >= 1")
        n_filler = self.vocab_size - self.n_types * self.entity_vocab_per_type
        if n_filler < 1:
            raise ConfigError("vocab_size too small for the entity sub-vocabularies")


TYPE_NAMES = ("PER", "LOC", "ORG", "MISC")


def _type_name(k: int) -> str:
    return TYPE_NAMES[k] if k < len(TYPE_NAMES) else f"T{k}"


def _role_vocab(type_name: str, size: int) -> dict[str, list[str]]:
    single = max(1, size // 4)
    rest = size - single
    b = rest // 3
    m = rest // 3
    e = rest - b - m
    tag = type_name.lower()
    return {
        "S": [f"{tag}_s{i}" for i in range(single)],
        "B": [f"{tag}_b{i}" for i in range(b)],
        "M": [f"{tag}_m{i}" for i in range(m)],
        "E": [f"{tag}_e{i}" for i in range(e)],
    }


def generate_toy_corpus(spec: ToyCorpusSpec) -> list[Sentence]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    fillers = [f"w{i:03d}" for i in range(spec.vocab_size - spec.n_types * spec.entity_vocab_per_type)]
    types = [_type_name(k) for k in range(spec.n_types)]
    roles = {t: _role_vocab(t, spec.entity_vocab_per_type) for t in types}

    corpus = []
    for _ in range(spec.n_sentences):
        n = int(rng.integers(spec.min_len, spec.max_len + 1))
        # Stochastic rounding keeps the expected entity-token fraction at `density`.
        target = spec.density * n
        k = int(math.floor(target) + (rng.random() < target - math.floor(target)))
        widths = []
        while sum(widths) < k:
            widths.append(int(rng.integers(1, min(spec.max_entity_width, k - sum(widths)) + 1)))
        n_fill = n - k
        if len(widths) > n_fill + 1:
            raise ConfigError(f"cannot place {len(widths)} separated entities in {n} tokens")
        gaps = np.sort(rng.choice(n_fill + 1, size=len(widths), replace=False))
        tokens, entities = [], []
        placed = 0
        for slot in range(n_fill + 1):
            while placed < len(widths) and gaps[placed] == slot:
                w = widths[placed]
                etype = types[int(rng.integers(spec.n_types))]
                r = roles[etype]
                if w == 1:
                    surface = [r["S"][rng.integers(len(r["S"]))]]
                else:
                    surface = (
                        [r["B"][rng.integers(len(r["B"]))]]
                        + [r["M"][rng.integers(len(r["M"]))] for _ in range(w - 2)]
                        + [r["E"][rng.integers(len(r["E"]))]]
                    )
                begin = len(tokens) + 1
                tokens.extend(surface)
                entities.append((begin, begin + w - 1, etype))
                placed += 1
            if slot < n_fill:
                tokens.append(fillers[rng.integers(len(fillers))])
        corpus.append(Sentence(tokens, entities))
    return corpus


# -- noise injection -----------------------------------------------------------


def mask_entities(corpus: Sequence[Sentence], mask_prob: float, seed: int = 0):
    """Demote each gold entity to non-entity with probability ``mask_prob``.

    Returns the corrupted corpus and a manifest row per sentence listing the
    masked entities.  Tokens are never changed.
    """
    if not 0.0 <= mask_prob <= 1.0:
        raise ConfigError(f"mask probability must lie in [0, 1], got {mask_prob}")
    rng = np.random.default_rng(seed)
    out, manifest = [], []
    for i, sent in enumerate(corpus):
        draws = rng.random(len(sent.entities))
        kept = [ent for ent, u in zip(sent.entities, draws) if u >= mask_prob]
        masked = [ent for ent, u in zip(sent.entities, draws) if u < mask_prob]
        out.append(Sentence(sent.tokens, kept))
        manifest.append({"sentence": i, "masked": [list(ent) for ent in masked]})
    return out, manifest


# -- spans ---------------------------------------------------------------------


def enumerate_spans(sentence: Sentence, max_width: int, labels: Sequence[str], sentence_id: int = 0) -> list[SpanSample]:
    n = len(sentence)
    if n == 0:
        raise InvalidInputError("cannot enumerate spans of an empty sentence")
    index = {name: k for k, name in enumerate(labels)}
    gold = {}
    for b, e, t in sentence.entities:
        if t not in index:
            raise InvalidInputError(f"entity type {t!r} not in label set {list(labels)}")
        gold[(b, e)] = index[t]
    out = []
    for b in range(1, n + 1):
        for e in range(b, min(n, b + max_width - 1) + 1):
            label = gold.get((b, e), 0)
            out.append(SpanSample(sentence_id, b, e, label, label != 0))
    return out


def span_count(n: int, max_width: int) -> int:
    """Number of spans of width <= max_width in an n-token sentence."""
    m = min(n, max_width)
    return n * m - m * (m - 1) // 2


def sample_negatives(samples: Sequence[SpanSample], keep_rate: float, seed: int = 0) -> list[SpanSample]:
    """Keep every positive, and each negative independently with ``keep_rate``."""
    if not 0.0 < keep_rate <= 1.0:
        raise ConfigError(f"negative keep rate must lie in (0, 1], got {keep_rate}")
    rng = np.random.default_rng(seed)
    draws = rng.random(len(samples))
    return [s for s, u in zip(samples, draws) if s.is_positive or u < keep_rate]
