"""Interaction-log ingestion and a synthetic corpus generator.

The generator plants concept clusters with synonym surface forms, typos,
morphological variants, and optional word-order phrase pairs, so that
tokenization and loss ablations have measurable signal at desk scale.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterable, TextIO

import numpy as np

VALID_LABELS = ("purchased", "impressed")

_CONSONANTS = "bcdfghjklmnprstvz"
_VOWELS = "aeiou"


@dataclass(frozen=True)
class LogRecord:
    query: str
    product_id: str
    product_text: str
    label: str
    count: int


@dataclass
class ParseStats:
    total_lines: int = 0
    parsed: int = 0
    malformed: int = 0


def parse_log(stream: Iterable[str]) -> tuple[list[LogRecord], ParseStats]:
    """Parse tab-separated log lines; skip malformed ones with a counter.

    Aborts when more than 10% of non-empty lines are malformed.
    """
    records: list[LogRecord] = []
    stats = ParseStats()
    for line in stream:
        line = line.rstrip("\n")
        if not line:
            continue
        stats.total_lines += 1
        fields = line.split("\t")
        if len(fields) != 5:
            stats.malformed += 1
            continue
        query, pid, ptext, label, count_s = fields
        try:
            count = int(count_s)
        except ValueError:
            stats.malformed += 1
            continue
        if label not in VALID_LABELS or count < 1 or not query or not pid:
            stats.malformed += 1
            continue
        records.append(LogRecord(query, pid, ptext, label, count))
        stats.parsed += 1
    if stats.total_lines and stats.malformed > 0.1 * stats.total_lines:
        raise ValueError(
            f"{stats.malformed}/{stats.total_lines} malformed log lines (>10%)"
        )
    return records, stats


@dataclass(frozen=True)
class SynthConfig:
    concepts: int = 100
    synonyms_per_concept: int = 3
    products: int = 10_000
    queries: int = 2_000
    eval_queries: int = 400
    typo_rate: float = 0.0
    morph_rate: float = 0.0
    impressed_per_purchase: int = 4
    concepts_per_product: int = 3
    query_concepts: int = 2
    phrase_pairs: int = 0
    # When > 0, every product text carries a unique model-number token and
    # queries repeat their target's token with this probability. These tokens
    # are too rare for any frequency-ranked vocabulary, so only consistent
    # OOV hashing can exploit them.
    model_number_rate: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        for name in (
            "concepts",
            "synonyms_per_concept",
            "products",
            "queries",
            "impressed_per_purchase",
            "concepts_per_product",
            "query_concepts",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("typo_rate", "morph_rate", "model_number_rate"):
            if not (0.0 <= getattr(self, name) <= 1.0):
                raise ValueError(f"{name} must be in [0, 1]")


def _make_word(rng: np.random.Generator, used: set[str]) -> str:
    while True:
        syllables = int(rng.integers(2, 4))
        word = "".join(
            _CONSONANTS[int(rng.integers(len(_CONSONANTS)))]
            + _VOWELS[int(rng.integers(len(_VOWELS)))]
            for _ in range(syllables)
        )
        if word not in used:
            used.add(word)
            return word


def _make_model_number(rng: np.random.Generator, used: set[str]) -> str:
    while True:
        token = (
            _CONSONANTS[int(rng.integers(len(_CONSONANTS)))]
            + _CONSONANTS[int(rng.integers(len(_CONSONANTS)))]
            + str(int(rng.integers(100, 1000)))
        )
        if token not in used:
            used.add(token)
            return token


def _typo(word: str, rng: np.random.Generator) -> str:
    letters = "abcdefghijklmnopqrstuvwxyz"
    kind = int(rng.integers(4))
    pos = int(rng.integers(len(word)))
    if kind == 0:  # substitute
        c = letters[int(rng.integers(26))]
        return word[:pos] + c + word[pos + 1 :]
    if kind == 1 and len(word) > 2:  # delete
        return word[:pos] + word[pos + 1 :]
    if kind == 2:  # insert
        c = letters[int(rng.integers(26))]
        return word[:pos] + c + word[pos:]
    if pos < len(word) - 1:  # transpose
        return word[:pos] + word[pos + 1] + word[pos] + word[pos + 2 :]
    return word


def _morph(word: str, rng: np.random.Generator) -> str:
    del rng
    return word[:-1] if word.endswith("s") else word + "s"


@dataclass
class SynthCorpus:
    catalog: list[tuple[str, str]]  # (product_id, product_text)
    train_logs: list[LogRecord]
    eval_logs: list[LogRecord]
    queries: list[tuple[str, str]]  # (query_id, query_text)
    ground_truth: list[tuple[str, str]]  # (query_id, product_id)


def _generate(config: SynthConfig) -> SynthCorpus:
    rng = np.random.default_rng(config.seed)
    used: set[str] = set()

    # Concept surface forms. Phrase-pair concepts realize as two ordered
    # tokens; each mirrored pair shares its word set with reversed order,
    # so unigram bags cannot tell them apart.
    surfaces: list[list[str]] = []
    for _ in range(config.concepts):
        surfaces.append([_make_word(rng, used) for _ in range(config.synonyms_per_concept)])
    for _ in range(config.phrase_pairs):
        w1, w2 = _make_word(rng, used), _make_word(rng, used)
        surfaces.append([f"{w1} {w2}"])
        surfaces.append([f"{w2} {w1}"])
    n_concepts = len(surfaces)

    brands = [_make_word(rng, used) for _ in range(12)]
    colors = [_make_word(rng, used) for _ in range(8)]

    signatures: list[tuple[int, ...]] = []
    catalog: list[tuple[str, str]] = []
    by_concept: dict[int, list[int]] = {c: [] for c in range(n_concepts)}
    for i in range(config.products):
        k = min(config.concepts_per_product, n_concepts)
        sig = tuple(sorted(rng.choice(n_concepts, size=k, replace=False).tolist()))
        tokens: list[str] = []
        for c in sig:
            form = surfaces[c][int(rng.integers(len(surfaces[c])))]
            tokens.extend(form.split())
        tokens.append(brands[int(rng.integers(len(brands)))])
        tokens.append(colors[int(rng.integers(len(colors)))])
        if config.model_number_rate > 0:
            tokens.append(_make_model_number(rng, used))
        pid = f"P{i:06d}"
        signatures.append(sig)
        catalog.append((pid, " ".join(tokens)))
        for c in sig:
            by_concept[c].append(i)

    def make_query(qid: str, seen_texts: set[str]) -> tuple[str, str, int, tuple[int, ...], list[str]]:
        for _attempt in range(200):
            target = int(rng.integers(config.products))
            sig = signatures[target]
            k = min(config.query_concepts, len(sig))
            chosen = tuple(sorted(rng.choice(sig, size=k, replace=False).tolist()))
            tokens: list[str] = []
            for c in chosen:
                form = surfaces[c][int(rng.integers(len(surfaces[c])))]
                for tok in form.split():
                    if rng.random() < config.morph_rate:
                        tok = _morph(tok, rng)
                    if rng.random() < config.typo_rate:
                        tok = _typo(tok, rng)
                    tokens.append(tok)
            if config.model_number_rate > 0 and rng.random() < config.model_number_rate:
                # The target's model number is the last token of its text.
                tokens.append(catalog[target][1].split()[-1])
            text = " ".join(tokens)
            if text and text not in seen_texts:
                seen_texts.add(text)
                relevant = [
                    p
                    for p in set().union(*(by_concept[c] for c in chosen))
                    if set(chosen) <= set(signatures[p])
                ]
                return qid, text, target, chosen, [f"P{p:06d}" for p in sorted(relevant)]
        raise RuntimeError("could not generate a unique query text")

    queries: list[tuple[str, str]] = []
    ground_truth: list[tuple[str, str]] = []
    train_logs: list[LogRecord] = []
    eval_logs: list[LogRecord] = []
    seen_texts: set[str] = set()

    def emit(qid: str, sink: list[LogRecord]) -> None:
        qid, text, target, chosen, relevant = make_query(qid, seen_texts)
        queries.append((qid, text))
        ground_truth.extend((qid, pid) for pid in relevant)
        count = int(rng.integers(1, 4))
        sink.append(
            LogRecord(text, f"P{target:06d}", catalog[target][1], "purchased", count)
        )
        # Impressed: partial-signature products (share a chosen concept but
        # are not full semantic matches).
        candidates = sorted(
            p
            for p in set().union(*(by_concept[c] for c in chosen))
            if p != target and not (set(chosen) <= set(signatures[p]))
        )
        if candidates:
            n_imp = min(config.impressed_per_purchase, len(candidates))
            picks = rng.choice(len(candidates), size=n_imp, replace=False)
            for j in sorted(picks.tolist()):
                p = candidates[j]
                sink.append(
                    LogRecord(text, f"P{p:06d}", catalog[p][1], "impressed", 1)
                )

    for i in range(config.queries):
        emit(f"Q{i:05d}", train_logs)
    for i in range(config.eval_queries):
        emit(f"QE{i:05d}", eval_logs)

    return SynthCorpus(
        catalog=catalog,
        train_logs=train_logs,
        eval_logs=eval_logs,
        queries=queries,
        ground_truth=ground_truth,
    )


def _write_logs(f: TextIO, logs: list[LogRecord]) -> None:
    for r in logs:
        f.write(f"{r.query}\t{r.product_id}\t{r.product_text}\t{r.label}\t{r.count}\n")


def gen_synthetic(config: SynthConfig, out_dir: str) -> dict[str, str]:
    """Generate catalog, train/eval logs, queries, and ground truth files.

    Output is fully determined by the config (including seed).
    """
    corpus = _generate(config)
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "catalog": os.path.join(out_dir, "catalog.tsv"),
        "logs": os.path.join(out_dir, "logs.tsv"),
        "eval_logs": os.path.join(out_dir, "eval_logs.tsv"),
        "queries": os.path.join(out_dir, "queries.tsv"),
        "ground_truth": os.path.join(out_dir, "ground_truth.tsv"),
    }
    with open(paths["catalog"], "w") as f:
        for pid, text in corpus.catalog:
            f.write(f"{pid}\t{text}\n")
    with open(paths["logs"], "w") as f:
        _write_logs(f, corpus.train_logs)
    with open(paths["eval_logs"], "w") as f:
        _write_logs(f, corpus.eval_logs)
    with open(paths["queries"], "w") as f:
        for qid, text in corpus.queries:
            f.write(f"{qid}\t{text}\n")
    with open(paths["ground_truth"], "w") as f:
        for qid, pid in corpus.ground_truth:
            f.write(f"{qid}\t{pid}\n")
    return paths


def read_catalog(stream: Iterable[str]) -> list[tuple[str, str]]:
    out = []
    for line in stream:
        line = line.rstrip("\n")
        if not line:
            continue
        pid, text = line.split("\t", 1)
        out.append((pid, text))
    return out
