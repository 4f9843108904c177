"""Tokenizer, vocabulary, and OOV hashing tests."""

import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semmatch.tokenizer import (
    CHAR_TRIGRAM,
    UNIGRAM,
    TokenizerConfig,
    Vocabulary,
    build_vocabulary,
    char_trigrams,
    encode,
    fnv1a64,
    hash_oov,
    load_vocabulary,
    ngram_class,
    save_vocabulary,
    tokenize,
    word_ngrams,
    word_unigrams,
)

GOLDEN_TEXT = "artistic iphone 6s case"

# Independently derived by sliding a 3-char window over
# "#artistic#iphone#6s#case#" (25 chars -> 23 windows).
GOLDEN_CHAR_TRIGRAMS = [
    "#ar", "art", "rti", "tis", "ist", "sti", "tic", "ic#", "c#i",
    "#ip", "iph", "pho", "hon", "one", "ne#", "e#6", "#6s", "6s#",
    "s#c", "#ca", "cas", "ase", "se#",
]

GOLDEN_BIGRAMS = ["artistic#iphone", "iphone#6s", "6s#case"]
GOLDEN_WORD_TRIGRAMS = ["artistic#iphone#6s", "iphone#6s#case"]


class TestGoldenExamples:
    def test_char_trigrams_golden(self):
        got = char_trigrams(GOLDEN_TEXT)
        assert got == GOLDEN_CHAR_TRIGRAMS
        assert len(got) == 23

    def test_bigrams_golden(self):
        words = GOLDEN_TEXT.split()
        got = word_ngrams(words, 2)
        assert got == GOLDEN_BIGRAMS
        assert len(got) == 3

    def test_word_trigrams_golden(self):
        words = GOLDEN_TEXT.split()
        got = word_ngrams(words, 3)
        assert got == GOLDEN_WORD_TRIGRAMS
        assert len(got) == 2

    def test_unigrams_golden(self):
        cfg = TokenizerConfig()
        assert word_unigrams(GOLDEN_TEXT, cfg) == ["artistic", "iphone", "6s", "case"]


class TestTokenize:
    def test_combined_bag_order(self):
        cfg = TokenizerConfig(
            use_unigrams=True, ngram_orders=(2,), use_char_trigrams=True
        )
        bag = tokenize("red shoe", cfg)
        classes = [c for c, _ in bag]
        # Canonical order: unigrams, then n-grams by order, then char trigrams.
        assert classes == [UNIGRAM] * 2 + [ngram_class(2)] + [CHAR_TRIGRAM] * 8

    def test_lowercasing(self):
        cfg = TokenizerConfig()
        assert tokenize("Red SHOE", cfg) == tokenize("red shoe", cfg)
        raw = TokenizerConfig(lowercase=False)
        assert ("unigram", "Red") in tokenize("Red SHOE", raw)

    def test_whitespace_runs_collapse(self):
        cfg = TokenizerConfig(use_char_trigrams=True, use_unigrams=False)
        assert tokenize("a  b", cfg) == tokenize("a b", cfg)
        assert tokenize(" a b ", cfg) == tokenize("a b", cfg)

    def test_empty_text(self):
        cfg = TokenizerConfig(
            use_unigrams=True, ngram_orders=(2,), use_char_trigrams=True
        )
        assert tokenize("", cfg) == []
        assert tokenize("   ", cfg) == []

    def test_short_text_has_no_ngrams(self):
        cfg = TokenizerConfig(use_unigrams=True, ngram_orders=(2, 3))
        bag = tokenize("solo", cfg)
        assert bag == [(UNIGRAM, "solo")]

    def test_config_requires_some_class(self):
        with pytest.raises(ValueError):
            TokenizerConfig(use_unigrams=False)

    @given(st.text(max_size=60))
    @settings(max_examples=200, deadline=None)
    def test_char_trigram_count_matches_wrapped_length(self, text):
        tris = char_trigrams(text)
        stripped = text.strip()
        if not stripped:
            assert tris == []
        else:
            import re

            wrapped = "#" + re.sub(r"\s+", "#", stripped) + "#"
            assert len(tris) == max(0, len(wrapped) - 2)
            assert all(len(t) == 3 for t in tris)

    @given(st.lists(st.text(alphabet="abc", min_size=1, max_size=4), max_size=8),
           st.integers(min_value=2, max_value=4))
    @settings(max_examples=200, deadline=None)
    def test_ngram_count(self, words, n):
        grams = word_ngrams(words, n)
        assert len(grams) == max(0, len(words) - n + 1)
        for g in grams:
            assert g.count("#") == n - 1


class TestHashing:
    def test_fnv1a64_reference_values(self):
        # Standard FNV-1a 64-bit reference vectors.
        assert fnv1a64(b"") == 0xCBF29CE484222325
        assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
        assert fnv1a64(b"foobar") == 0x85944171F73967E8

    def test_hash_oov_range(self):
        v, bins = 100, 37
        for token in ("alpha", "beta", "x123", ""):
            h = hash_oov(UNIGRAM, token, bins, v)
            assert v + 1 <= h <= v + bins

    def test_hash_oov_deterministic(self):
        assert hash_oov(UNIGRAM, "tok", 16, 10) == hash_oov(UNIGRAM, "tok", 16, 10)

    def test_class_tag_separates_collisions(self):
        # The same string in different classes feeds different tag bytes, so
        # they are not forced to collide.
        hashes = {
            cls: hash_oov(cls, "same", 1 << 20, 0)
            for cls in (UNIGRAM, CHAR_TRIGRAM, ngram_class(2), ngram_class(3))
        }
        assert len(set(hashes.values())) == len(hashes)

    def test_hash_distribution_roughly_uniform(self):
        bins = 64
        counts = np.zeros(bins, dtype=int)
        for i in range(64 * 200):
            counts[hash_oov(UNIGRAM, f"token{i}", bins, 0) - 1] += 1
        # Every bin hit; no bin more than twice the mean.
        assert counts.min() > 0
        assert counts.max() < 2 * counts.mean()


def _corpus(rows):
    return [("query", t) for t in rows]


class TestVocabulary:
    def test_frequency_ranking_and_tiebreak(self):
        cfg = TokenizerConfig(budget_per_class={UNIGRAM: 2})
        vocab = build_vocabulary(
            _corpus(["b b b", "c c", "a a", "z"]), cfg
        )
        # b (3) first, then the a/c tie breaks lexicographically: a wins.
        assert vocab.token_to_id[(UNIGRAM, "b")] == 1
        assert vocab.token_to_id[(UNIGRAM, "a")] == 2
        assert (UNIGRAM, "c") not in vocab.token_to_id
        assert vocab.v == 2

    def test_ids_dense_from_one(self):
        cfg = TokenizerConfig(
            use_unigrams=True,
            use_char_trigrams=True,
            budget_per_class={UNIGRAM: 100, CHAR_TRIGRAM: 100},
        )
        vocab = build_vocabulary(_corpus(["red shoe", "blue shoe"]), cfg)
        ids = sorted(vocab.token_to_id.values())
        assert ids == list(range(1, len(ids) + 1))
        assert vocab.v == len(ids)

    def test_budget_truncates(self):
        cfg = TokenizerConfig(budget_per_class={UNIGRAM: 3})
        vocab = build_vocabulary(_corpus(["a b c d e f g"]), cfg)
        assert vocab.v == 3

    def test_empty_corpus_rejected(self):
        cfg = TokenizerConfig(budget_per_class={UNIGRAM: 3})
        with pytest.raises(ValueError):
            build_vocabulary([], cfg)

    def test_missing_budget_rejected(self):
        cfg = TokenizerConfig(use_unigrams=True, use_char_trigrams=True,
                              budget_per_class={UNIGRAM: 3})
        with pytest.raises(ValueError):
            build_vocabulary(_corpus(["a b"]), cfg)

    def test_rebuild_stability(self):
        cfg = TokenizerConfig(budget_per_class={UNIGRAM: 50})
        rows = ["red shoe", "blue shoe", "green hat red"]
        v1 = build_vocabulary(_corpus(rows), cfg)
        v2 = build_vocabulary(_corpus(rows), cfg)
        assert v1.token_to_id == v2.token_to_id

    def test_derived_percentile_lengths(self):
        cfg = TokenizerConfig(budget_per_class={UNIGRAM: 100})
        rows = [("query", " ".join(["w"] * k)) for k in range(1, 101)]
        vocab = build_vocabulary(rows, cfg)
        # Nearest-rank 99th percentile of lengths 1..100 is 99.
        assert vocab.derived_query_max == 99
        assert vocab.derived_product_max is None

    def test_save_load_roundtrip(self):
        cfg = TokenizerConfig(
            use_unigrams=True,
            ngram_orders=(2,),
            use_char_trigrams=True,
            budget_per_class={UNIGRAM: 50, ngram_class(2): 50, CHAR_TRIGRAM: 50},
            oov_bins=17,
        )
        vocab = build_vocabulary(_corpus(["red shoe", "blue shoe sale"]), cfg)
        buf = io.StringIO()
        save_vocabulary(vocab, buf)
        buf.seek(0)
        loaded = load_vocabulary(buf)
        assert loaded.token_to_id == vocab.token_to_id
        assert loaded.v == vocab.v
        assert loaded.oov_bins == vocab.oov_bins
        assert loaded.class_counts == vocab.class_counts

    def test_load_rejects_bad_header(self):
        with pytest.raises(ValueError):
            load_vocabulary(io.StringIO("garbage\n"))

    def test_load_rejects_count_mismatch(self):
        with pytest.raises(ValueError):
            load_vocabulary(io.StringIO("V=2 B=0\nunigram\ta\t1\n"))


class TestEncode:
    @pytest.fixture
    def setup(self):
        cfg = TokenizerConfig(
            budget_per_class={UNIGRAM: 10},
            oov_bins=8,
            query_max_tokens=5,
            product_max_tokens=7,
        )
        vocab = build_vocabulary(_corpus(["red shoe", "blue shoe"]), cfg)
        return cfg, vocab

    def test_fixed_length_and_padding(self, setup):
        cfg, vocab = setup
        bag = encode("red shoe", "query", vocab, cfg)
        assert bag.ids.shape == (5,)
        assert bag.valid_count == 2
        assert list(bag.ids[2:]) == [0, 0, 0]

    def test_truncation(self, setup):
        cfg, vocab = setup
        bag = encode("red shoe blue red shoe blue red", "query", vocab, cfg)
        assert bag.ids.shape == (5,)
        assert bag.valid_count == 5

    def test_oov_hashes_into_bins(self, setup):
        cfg, vocab = setup
        bag = encode("mystery", "query", vocab, cfg)
        assert vocab.v + 1 <= bag.ids[0] <= vocab.v + vocab.oov_bins
        assert bag.valid_count == 1

    def test_oov_drops_to_zero_without_bins(self):
        cfg = TokenizerConfig(budget_per_class={UNIGRAM: 10}, query_max_tokens=4,
                              product_max_tokens=4)
        vocab = build_vocabulary(_corpus(["red shoe"]), cfg)
        bag = encode("mystery red", "query", vocab, cfg)
        assert list(bag.ids[:2]) == [0, vocab.token_to_id[(UNIGRAM, "red")]]
        assert bag.valid_count == 1

    def test_empty_text(self, setup):
        cfg, vocab = setup
        bag = encode("", "query", vocab, cfg)
        assert bag.valid_count == 0
        assert not bag.ids.any()

    def test_sides_use_own_lengths(self, setup):
        cfg, vocab = setup
        assert encode("red", "product", vocab, cfg).ids.shape == (7,)

    @given(st.text(alphabet="abcdefgh ", max_size=40))
    @settings(max_examples=150, deadline=None)
    def test_ids_always_in_row_range(self, text):
        cfg = TokenizerConfig(
            use_unigrams=True,
            use_char_trigrams=True,
            budget_per_class={UNIGRAM: 5, CHAR_TRIGRAM: 5},
            oov_bins=11,
            query_max_tokens=30,
            product_max_tokens=30,
        )
        vocab = build_vocabulary(_corpus(["abc def", "gh abc"]), cfg)
        bag = encode(text, "query", vocab, cfg)
        assert bag.ids.min() >= 0
        assert bag.ids.max() <= vocab.v + vocab.oov_bins
        assert bag.valid_count == int(np.count_nonzero(bag.ids))
