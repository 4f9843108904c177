"""Hashed bag-of-ngrams tokenization with a frequency-ranked vocabulary.

Text is broken into word unigrams, '#'-joined word n-grams, and character
trigrams. All enabled token classes share one dense id space; tokens that
miss the vocabulary either map to the reserved id 0 or are hashed into a
fixed range of out-of-vocabulary bins.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np

UNIGRAM = "unigram"
CHAR_TRIGRAM = "ctri"

_WS = re.compile(r"\s+")

# One tag byte per token class so identical strings from different classes
# can never hash to the same OOV bin input.
_CLASS_TAG_BASE_NGRAM = 0x10


def ngram_class(n: int) -> str:
    """Name of the word n-gram token class for order ``n``."""
    return f"ngram{n}"


def _class_tag(token_class: str) -> int:
    if token_class == UNIGRAM:
        return 0x01
    if token_class == CHAR_TRIGRAM:
        return 0x02
    if token_class.startswith("ngram"):
        return _CLASS_TAG_BASE_NGRAM + int(token_class[5:])
    raise ValueError(f"unknown token class: {token_class!r}")


@dataclass(frozen=True)
class TokenizerConfig:
    lowercase: bool = True
    use_unigrams: bool = True
    ngram_orders: tuple[int, ...] = ()
    use_char_trigrams: bool = False
    budget_per_class: dict[str, int] = field(default_factory=dict)
    oov_bins: int = 0
    query_max_tokens: int | None = None
    product_max_tokens: int | None = None

    def __post_init__(self) -> None:
        if not (self.use_unigrams or self.ngram_orders or self.use_char_trigrams):
            raise ValueError("at least one token class must be enabled")
        if any(n < 2 for n in self.ngram_orders):
            raise ValueError("ngram orders must be >= 2")
        if self.oov_bins < 0:
            raise ValueError("oov_bins must be non-negative")
        for side in ("query_max_tokens", "product_max_tokens"):
            v = getattr(self, side)
            if v is not None and v < 1:
                raise ValueError(f"{side} must be positive")

    def enabled_classes(self) -> list[str]:
        """Token classes in the canonical bag order."""
        classes = []
        if self.use_unigrams:
            classes.append(UNIGRAM)
        for n in sorted(self.ngram_orders):
            classes.append(ngram_class(n))
        if self.use_char_trigrams:
            classes.append(CHAR_TRIGRAM)
        return classes

    def budget_for(self, token_class: str) -> int:
        budget = self.budget_per_class.get(token_class, 0)
        if budget <= 0:
            raise ValueError(f"missing or non-positive budget for {token_class}")
        return budget

    def max_tokens(self, side: str) -> int | None:
        if side == "query":
            return self.query_max_tokens
        if side == "product":
            return self.product_max_tokens
        raise ValueError(f"side must be 'query' or 'product', got {side!r}")


def word_unigrams(text: str, config: TokenizerConfig) -> list[str]:
    """Split on whitespace runs, lowercasing first when configured."""
    if config.lowercase:
        text = text.lower()
    return text.split()


def word_ngrams(tokens: list[str], n: int) -> list[str]:
    """Consecutive n-word windows joined with '#'. Empty when len(tokens) < n."""
    if n < 2:
        raise ValueError("n must be >= 2")
    return ["#".join(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def char_trigrams(text: str) -> list[str]:
    """All 3-char windows of the text wrapped in '#' with whitespace runs as '#'."""
    stripped = text.strip()
    if not stripped:
        return []
    wrapped = "#" + _WS.sub("#", stripped) + "#"
    return [wrapped[i : i + 3] for i in range(len(wrapped) - 2)]


def tokenize(text: str, config: TokenizerConfig) -> list[tuple[str, str]]:
    """The combined bag: (class, token) pairs in canonical class order."""
    if config.lowercase:
        text = text.lower()
    words = text.split()
    out: list[tuple[str, str]] = []
    if config.use_unigrams:
        out.extend((UNIGRAM, w) for w in words)
    for n in sorted(config.ngram_orders):
        out.extend((ngram_class(n), g) for g in word_ngrams(words, n))
    if config.use_char_trigrams:
        out.extend((CHAR_TRIGRAM, t) for t in char_trigrams(text))
    return out


_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


def hash_oov(token_class: str, token: str, bins: int, v: int) -> int:
    """Deterministic OOV bin id in [V+1, V+B] for an unseen token."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    data = bytes([_class_tag(token_class)]) + token.encode("utf-8")
    return v + 1 + fnv1a64(data) % bins


@dataclass
class Vocabulary:
    """Dense (class, token) -> id map plus the OOV bin range.

    Ids 1..V are in-vocabulary, 0 is the reserved masked id, and
    V+1..V+B are OOV hash bins.
    """

    token_to_id: dict[tuple[str, str], int]
    v: int
    oov_bins: int
    class_counts: dict[str, int]
    derived_query_max: int | None = None
    derived_product_max: int | None = None

    def id_for(self, token_class: str, token: str) -> int:
        tid = self.token_to_id.get((token_class, token))
        if tid is not None:
            return tid
        if self.oov_bins > 0:
            return hash_oov(token_class, token, self.oov_bins, self.v)
        return 0

    @property
    def total_rows(self) -> int:
        """Embedding rows needed: reserved 0, V in-vocab, B bins."""
        return self.v + self.oov_bins + 1


@dataclass
class TokenBag:
    """Fixed-length id sequence for one text, right-padded with 0."""

    ids: np.ndarray
    valid_count: int


def _nearest_rank_percentile(values: list[int], q: float) -> int:
    ordered = sorted(values)
    rank = max(1, math.ceil(q * len(ordered)))
    return ordered[rank - 1]


def build_vocabulary(
    corpus: Iterable[tuple[str, str]], config: TokenizerConfig
) -> Vocabulary:
    """Count tokens over (side, text) records and keep the top-budget per class.

    Ties break by lexicographic token order so rebuilds are reproducible.
    When max lengths are not set in the config, the 99th-percentile bag
    lengths per side are recorded on the returned vocabulary.
    """
    counts: dict[str, Counter] = {c: Counter() for c in config.enabled_classes()}
    lengths: dict[str, list[int]] = {"query": [], "product": []}
    seen = 0
    for side, text in corpus:
        seen += 1
        bag = tokenize(text, config)
        for token_class, token in bag:
            counts[token_class][token] += 1
        if side in lengths:
            lengths[side].append(len(bag))
    if seen == 0:
        raise ValueError("empty corpus: no records to build a vocabulary from")

    token_to_id: dict[tuple[str, str], int] = {}
    class_counts: dict[str, int] = {}
    next_id = 1
    for token_class in config.enabled_classes():
        budget = config.budget_for(token_class)
        ranked = sorted(counts[token_class].items(), key=lambda kv: (-kv[1], kv[0]))
        kept = ranked[:budget]
        for token, _freq in kept:
            token_to_id[(token_class, token)] = next_id
            next_id += 1
        class_counts[token_class] = len(kept)

    derived_q = derived_p = None
    if config.query_max_tokens is None and lengths["query"]:
        derived_q = _nearest_rank_percentile(lengths["query"], 0.99)
    if config.product_max_tokens is None and lengths["product"]:
        derived_p = _nearest_rank_percentile(lengths["product"], 0.99)

    return Vocabulary(
        token_to_id=token_to_id,
        v=next_id - 1,
        oov_bins=config.oov_bins,
        class_counts=class_counts,
        derived_query_max=derived_q,
        derived_product_max=derived_p,
    )


def encode(
    text: str, side: str, vocab: Vocabulary, config: TokenizerConfig
) -> TokenBag:
    """Map text to a fixed-length TokenBag for the given side."""
    max_len = config.max_tokens(side)
    if max_len is None:
        max_len = (
            vocab.derived_query_max if side == "query" else vocab.derived_product_max
        )
    if max_len is None:
        raise ValueError(f"no max token length available for side {side!r}")
    ids = [vocab.id_for(c, t) for c, t in tokenize(text, config)]
    ids = ids[:max_len]
    out = np.zeros(max_len, dtype=np.int64)
    out[: len(ids)] = ids
    return TokenBag(ids=out, valid_count=int(np.count_nonzero(out)))


def save_vocabulary(vocab: Vocabulary, f: TextIO) -> None:
    f.write(f"V={vocab.v} B={vocab.oov_bins}\n")
    for (token_class, token), tid in sorted(vocab.token_to_id.items(), key=lambda kv: kv[1]):
        f.write(f"{token_class}\t{token}\t{tid}\n")


def load_vocabulary(f: TextIO) -> Vocabulary:
    header = f.readline().strip()
    m = re.fullmatch(r"V=(\d+) B=(\d+)", header)
    if m is None:
        raise ValueError(f"bad vocabulary header: {header!r}")
    v, bins = int(m.group(1)), int(m.group(2))
    token_to_id: dict[tuple[str, str], int] = {}
    class_counts: Counter = Counter()
    for line in f:
        line = line.rstrip("\n")
        if not line:
            continue
        token_class, token, tid = line.split("\t")
        token_to_id[(token_class, token)] = int(tid)
        class_counts[token_class] += 1
    if len(token_to_id) != v:
        raise ValueError("vocabulary record count does not match header V")
    return Vocabulary(
        token_to_id=token_to_id,
        v=v,
        oov_bins=bins,
        class_counts=dict(class_counts),
    )
