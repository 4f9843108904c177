"""Exact cosine retrieval over precomputed unit product embeddings."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterable

import numpy as np

from .model import EmbeddingModel, model_fingerprint, normalize_batch, pool_batch
from .tokenizer import TokenizerConfig, Vocabulary, encode

_IDX_MAGIC = b"SMINDEX1"
_IDX_VERSION = 1


@dataclass
class ProductIndex:
    ids: list[str]
    matrix: np.ndarray  # (count, N), unit rows or exact zero rows
    fingerprint: bytes  # 32-byte model digest

    def __post_init__(self) -> None:
        # Rank of each product id in ascending-id order, used for tie-breaks.
        order = sorted(range(len(self.ids)), key=lambda i: self.ids[i])
        self._id_rank = np.empty(len(self.ids), dtype=np.int64)
        for rank, i in enumerate(order):
            self._id_rank[i] = rank


@dataclass
class MatchResult:
    query_id: str
    threshold: float
    items: list[tuple[str, float]]  # (product id, score), score desc then id asc


def _embed_texts(
    texts: list[str], side: str, model: EmbeddingModel, vocab: Vocabulary, config: TokenizerConfig
) -> np.ndarray:
    """Inference-phase unit embeddings; empty bags embed as zero rows."""
    if not texts:
        return np.zeros((0, model.n), dtype=np.float64)
    arm = "query" if side == "query" else "product"
    ids = np.stack([encode(t, side, vocab, config).ids for t in texts])
    pooled, counts = pool_batch(ids, model.matrix_for(arm))
    out, _ = normalize_batch(pooled, arm, model, "infer")
    out = np.where((counts == 0)[:, None], 0.0, out)
    norms = np.linalg.norm(out, axis=1)
    safe = np.where(norms > 0.0, norms, 1.0)
    return out / safe[:, None]


def build_index(
    products: Iterable[tuple[str, str]],
    model: EmbeddingModel,
    vocab: Vocabulary,
    config: TokenizerConfig,
) -> ProductIndex:
    """Encode, embed, and unit-normalize every catalog product."""
    ids: list[str] = []
    texts: list[str] = []
    seen: set[str] = set()
    for pid, text in products:
        if pid in seen:
            raise ValueError(f"duplicate product id: {pid!r}")
        seen.add(pid)
        ids.append(pid)
        texts.append(text)
    matrix = _embed_texts(texts, "product", model, vocab, config)
    return ProductIndex(ids=ids, matrix=matrix, fingerprint=model_fingerprint(model))


def embed_query(
    text: str, model: EmbeddingModel, vocab: Vocabulary, config: TokenizerConfig
) -> np.ndarray:
    return _embed_texts([text], "query", model, vocab, config)[0]


def rank_all(query_vec: np.ndarray, index: ProductIndex) -> tuple[np.ndarray, np.ndarray]:
    """Scores for every product plus the full (score desc, id asc) order."""
    scores = index.matrix @ query_vec
    order = np.lexsort((index._id_rank, -scores))
    return scores, order


def top_k(
    query_text: str,
    index: ProductIndex,
    model: EmbeddingModel,
    vocab: Vocabulary,
    config: TokenizerConfig,
    k: int,
    threshold: float = 0.55,
    query_id: str = "",
) -> MatchResult:
    """Exact scan: up to k products with score >= threshold."""
    if k < 1:
        raise ValueError("k must be >= 1")
    qvec = embed_query(query_text, model, vocab, config)
    scores, order = rank_all(qvec, index)
    items: list[tuple[str, float]] = []
    for i in order:
        if len(items) == k:
            break
        if scores[i] >= threshold:
            items.append((index.ids[i], float(scores[i])))
    return MatchResult(query_id=query_id, threshold=threshold, items=items)


def save_index(index: ProductIndex, f: BinaryIO) -> None:
    count, n = index.matrix.shape
    f.write(_IDX_MAGIC)
    f.write(struct.pack("<IQI", _IDX_VERSION, count, n))
    f.write(index.fingerprint)
    for pid in index.ids:
        raw = pid.encode("utf-8")
        f.write(struct.pack("<I", len(raw)))
        f.write(raw)
    f.write(np.ascontiguousarray(index.matrix, dtype="<f8").tobytes())


def load_index(f: BinaryIO) -> ProductIndex:
    if f.read(8) != _IDX_MAGIC:
        raise ValueError("not an index file (bad magic)")
    version, count, n = struct.unpack("<IQI", f.read(struct.calcsize("<IQI")))
    if version != _IDX_VERSION:
        raise ValueError(f"unsupported index version {version}")
    fingerprint = f.read(32)
    ids = []
    for _ in range(count):
        (length,) = struct.unpack("<I", f.read(4))
        ids.append(f.read(length).decode("utf-8"))
    buf = f.read(count * n * 8)
    matrix = np.frombuffer(buf, dtype="<f8").reshape(count, n).copy()
    return ProductIndex(ids=ids, matrix=matrix, fingerprint=fingerprint)
