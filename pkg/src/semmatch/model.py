"""Siamese embedding-bag model: shared lookup, average pooling, normalization,
cosine scoring, and closed-form gradients.

All arithmetic is float64. Row 0 of every embedding matrix is the masked
padding row: it stays zero and never receives gradient.
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np

from .tokenizer import TokenBag

NORM_NONE = "none"
NORM_BATCH = "batch"
NORM_LAYER = "layer"
_NORM_CODES = {NORM_NONE: 0, NORM_BATCH: 1, NORM_LAYER: 2}
_NORM_NAMES = {v: k for k, v in _NORM_CODES.items()}

_CKPT_MAGIC = b"SMMODEL1"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    embedding_dim: int = 256
    shared_embeddings: bool = True
    normalization: str = NORM_BATCH
    bn_momentum: float = 0.99
    bn_epsilon: float = 1e-5

    def __post_init__(self) -> None:
        if self.embedding_dim < 1:
            raise ValueError("embedding_dim must be >= 1")
        if self.normalization not in _NORM_CODES:
            raise ValueError(f"unknown normalization: {self.normalization!r}")
        if not (0.0 < self.bn_momentum < 1.0):
            raise ValueError("bn_momentum must be in (0, 1)")
        if self.bn_epsilon <= 0:
            raise ValueError("bn_epsilon must be positive")


@dataclass
class NormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray

    @classmethod
    def fresh(cls, n: int) -> "NormState":
        return cls(
            gamma=np.ones(n, dtype=np.float64),
            beta=np.zeros(n, dtype=np.float64),
            running_mean=np.zeros(n, dtype=np.float64),
            running_var=np.ones(n, dtype=np.float64),
        )


class EmbeddingModel:
    """Embedding matrices (one shared or two decoupled arms) plus per-arm
    normalization state."""

    def __init__(
        self,
        config: ModelConfig,
        query_matrix: np.ndarray,
        product_matrix: np.ndarray,
        norm_query: NormState,
        norm_product: NormState,
        vocab_v: int,
        oov_bins: int,
    ):
        if config.shared_embeddings and query_matrix is not product_matrix:
            raise ValueError("shared config requires one shared matrix object")
        expected = (vocab_v + oov_bins + 1, config.embedding_dim)
        for m in (query_matrix, product_matrix):
            if m.shape != expected:
                raise ValueError(f"matrix shape {m.shape} != expected {expected}")
        self.config = config
        self.query_matrix = query_matrix
        self.product_matrix = product_matrix
        self.norm_query = norm_query
        self.norm_product = norm_product
        self.vocab_v = vocab_v
        self.oov_bins = oov_bins

    @property
    def n(self) -> int:
        return self.config.embedding_dim

    def matrix_for(self, arm: str) -> np.ndarray:
        if arm == "query":
            return self.query_matrix
        if arm == "product":
            return self.product_matrix
        raise ValueError(f"arm must be 'query' or 'product', got {arm!r}")

    def norm_for(self, arm: str) -> NormState:
        return self.norm_query if arm == "query" else self.norm_product

    def parameters(self) -> dict[str, np.ndarray]:
        """Named trainable arrays. Shared arms expose one matrix."""
        params: dict[str, np.ndarray] = {}
        if self.config.shared_embeddings:
            params["emb"] = self.query_matrix
        else:
            params["emb_q"] = self.query_matrix
            params["emb_p"] = self.product_matrix
        if self.config.normalization != NORM_NONE:
            params["gamma_q"] = self.norm_query.gamma
            params["beta_q"] = self.norm_query.beta
            params["gamma_p"] = self.norm_product.gamma
            params["beta_p"] = self.norm_product.beta
        return params


def pool_batch(ids: np.ndarray, matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Average the embedding rows of the non-zero ids of each bag.

    Row 0 is all zeros, so summing over every slot and dividing by the
    non-zero count is the masked mean. All-padding bags pool to zero.
    """
    ids = np.asarray(ids)
    if ids.min(initial=0) < 0 or ids.max(initial=0) >= matrix.shape[0]:
        raise ValueError("token id out of embedding-matrix bounds")
    counts = np.count_nonzero(ids, axis=1)
    summed = matrix[ids].sum(axis=1)
    pooled = summed / np.maximum(counts, 1)[:, None]
    return pooled, counts


def embed_bag(bag: TokenBag, arm: str, model: EmbeddingModel) -> np.ndarray:
    """Pooled embedding of one TokenBag."""
    pooled, _ = pool_batch(bag.ids[None, :], model.matrix_for(arm))
    return pooled[0]


@dataclass
class _NormCache:
    mode: str
    phase: str
    x: np.ndarray
    xhat: np.ndarray
    std: np.ndarray
    gamma: np.ndarray


def normalize_batch(
    x: np.ndarray, arm: str, model: EmbeddingModel, phase: str
) -> tuple[np.ndarray, _NormCache]:
    """Normalize a (B, N) batch of pooled embeddings for one arm."""
    if phase not in ("train", "infer"):
        raise ValueError(f"phase must be 'train' or 'infer', got {phase!r}")
    mode = model.config.normalization
    state = model.norm_for(arm)
    eps = model.config.bn_epsilon
    if mode == NORM_NONE:
        cache = _NormCache(mode, phase, x, x, np.ones(1), np.ones(1))
        return x, cache
    if mode == NORM_LAYER:
        mu = x.mean(axis=1, keepdims=True)
        var = x.var(axis=1, keepdims=True)
        std = np.sqrt(var + eps)
        xhat = (x - mu) / std
    else:  # batch
        if phase == "train":
            if x.shape[0] < 2:
                raise ValueError("batch normalization needs batch size >= 2 in train phase")
            mu = x.mean(axis=0)
            var = x.var(axis=0)
            std = np.sqrt(var + eps)
            xhat = (x - mu) / std
            mom = model.config.bn_momentum
            state.running_mean[:] = mom * state.running_mean + (1 - mom) * mu
            state.running_var[:] = mom * state.running_var + (1 - mom) * var
        else:
            std = np.sqrt(state.running_var + eps)
            xhat = (x - state.running_mean) / std
    out = state.gamma * xhat + state.beta
    return out, _NormCache(mode, phase, x, xhat, std, state.gamma)


def normalize(
    batch: np.ndarray, arm: str, model: EmbeddingModel, phase: str
) -> np.ndarray:
    """Public normalization over a (B, N) batch; see normalize_batch."""
    out, _ = normalize_batch(np.asarray(batch, dtype=np.float64), arm, model, phase)
    return out


def _norm_backward(dout: np.ndarray, cache: _NormCache) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dx, dgamma, dbeta) for one arm's normalization."""
    if cache.mode == NORM_NONE:
        z = np.zeros(dout.shape[1], dtype=np.float64)
        return dout, z, z
    dgamma = (dout * cache.xhat).sum(axis=0)
    dbeta = dout.sum(axis=0)
    dxhat = dout * cache.gamma
    if cache.mode == NORM_LAYER:
        m1 = dxhat.mean(axis=1, keepdims=True)
        m2 = (dxhat * cache.xhat).mean(axis=1, keepdims=True)
        dx = (dxhat - m1 - cache.xhat * m2) / cache.std
    elif cache.phase == "train":
        m1 = dxhat.mean(axis=0)
        m2 = (dxhat * cache.xhat).mean(axis=0)
        dx = (dxhat - m1 - cache.xhat * m2) / cache.std
    else:
        dx = dxhat / cache.std
    return dx, dgamma, dbeta


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; 0 when either vector has zero norm."""
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def cosine_batch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    denom = na * nb
    dots = (a * b).sum(axis=1)
    return np.where(denom > 0.0, dots / np.where(denom > 0.0, denom, 1.0), 0.0)


@dataclass
class ForwardCache:
    q_ids: np.ndarray
    p_ids: np.ndarray
    q_counts: np.ndarray
    p_counts: np.ndarray
    q_norm_cache: _NormCache
    p_norm_cache: _NormCache
    a: np.ndarray  # normalized query embeddings
    b: np.ndarray  # normalized product embeddings
    scores: np.ndarray
    empty: np.ndarray  # bool mask: either side had valid_count 0
    shared: bool


def forward_batch(
    q_ids: np.ndarray, p_ids: np.ndarray, model: EmbeddingModel, phase: str
) -> tuple[np.ndarray, ForwardCache]:
    """Score a batch of (query, product) bag pairs.

    Pairs where either side pooled to an empty bag score exactly 0 and
    contribute no cosine gradient (their pooled zeros still participate in
    batch statistics).
    """
    q_pooled, q_counts = pool_batch(q_ids, model.query_matrix)
    p_pooled, p_counts = pool_batch(p_ids, model.product_matrix)
    a, q_nc = normalize_batch(q_pooled, "query", model, phase)
    b, p_nc = normalize_batch(p_pooled, "product", model, phase)
    scores = cosine_batch(a, b)
    empty = (q_counts == 0) | (p_counts == 0)
    scores = np.where(empty, 0.0, scores)
    cache = ForwardCache(
        q_ids=np.asarray(q_ids),
        p_ids=np.asarray(p_ids),
        q_counts=q_counts,
        p_counts=p_counts,
        q_norm_cache=q_nc,
        p_norm_cache=p_nc,
        a=a,
        b=b,
        scores=scores,
        empty=empty,
        shared=model.config.shared_embeddings,
    )
    return scores, cache


def forward(
    query_bag: TokenBag, product_bag: TokenBag, model: EmbeddingModel, phase: str = "infer"
) -> tuple[float, ForwardCache]:
    scores, cache = forward_batch(
        query_bag.ids[None, :], product_bag.ids[None, :], model, phase
    )
    return float(scores[0]), cache


@dataclass
class SparseRowGrad:
    """Gradient for a subset of embedding rows."""

    rows: np.ndarray  # (k,) int64, sorted, never containing row 0
    values: np.ndarray  # (k, N)


Gradients = dict[str, "np.ndarray | SparseRowGrad"]


def _cosine_backward(cache: ForwardCache, dscores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a, b = cache.a, cache.b
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    ok = (na > 0.0) & (nb > 0.0) & ~cache.empty
    d = np.where(ok, dscores, 0.0)[:, None]
    na_s = np.where(na > 0.0, na, 1.0)[:, None]
    nb_s = np.where(nb > 0.0, nb, 1.0)[:, None]
    s = cache.scores[:, None]
    da = d * (b / (na_s * nb_s) - s * a / (na_s**2))
    db = d * (a / (na_s * nb_s) - s * b / (nb_s**2))
    da[~ok] = 0.0
    db[~ok] = 0.0
    return da, db


def _pool_backward(
    ids: np.ndarray, counts: np.ndarray, dpooled: np.ndarray
) -> SparseRowGrad:
    n = dpooled.shape[1]
    per_token = dpooled / np.maximum(counts, 1)[:, None]
    valid = ids != 0
    flat_ids = ids[valid]
    if flat_ids.size == 0:
        return SparseRowGrad(
            rows=np.empty(0, dtype=np.int64), values=np.empty((0, n), dtype=np.float64)
        )
    contrib = np.broadcast_to(per_token[:, None, :], ids.shape + (n,))[valid]
    rows, inverse = np.unique(flat_ids, return_inverse=True)
    values = np.zeros((rows.size, n), dtype=np.float64)
    np.add.at(values, inverse, contrib)
    return SparseRowGrad(rows=rows.astype(np.int64), values=values)


def _merge_sparse(a: SparseRowGrad, b: SparseRowGrad) -> SparseRowGrad:
    rows, inverse = np.unique(np.concatenate([a.rows, b.rows]), return_inverse=True)
    values = np.zeros((rows.size, a.values.shape[1]), dtype=np.float64)
    np.add.at(values, inverse, np.concatenate([a.values, b.values], axis=0))
    return SparseRowGrad(rows=rows, values=values)


def backward_batch(cache: ForwardCache, dscores: np.ndarray) -> Gradients:
    """Exact gradients of sum(dscores * scores) w.r.t. model parameters.

    Embedding gradients come back sparse per-row; shared arms accumulate
    both sides into one entry. Row 0 never appears.
    """
    da, db = _cosine_backward(cache, np.asarray(dscores, dtype=np.float64))
    dq_pooled, dgamma_q, dbeta_q = _norm_backward(da, cache.q_norm_cache)
    dp_pooled, dgamma_p, dbeta_p = _norm_backward(db, cache.p_norm_cache)
    grad_q = _pool_backward(cache.q_ids, cache.q_counts, dq_pooled)
    grad_p = _pool_backward(cache.p_ids, cache.p_counts, dp_pooled)
    grads: Gradients = {}
    if cache.shared:
        grads["emb"] = _merge_sparse(grad_q, grad_p)
    else:
        grads["emb_q"] = grad_q
        grads["emb_p"] = grad_p
    if cache.q_norm_cache.mode != NORM_NONE:
        grads["gamma_q"] = dgamma_q
        grads["beta_q"] = dbeta_q
        grads["gamma_p"] = dgamma_p
        grads["beta_p"] = dbeta_p
    return grads


def backward(cache: ForwardCache, dscore: float) -> Gradients:
    """Single-pair wrapper over backward_batch."""
    return backward_batch(cache, np.asarray([dscore], dtype=np.float64))


def _write_array(f: BinaryIO, a: np.ndarray) -> None:
    f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _read_array(f: BinaryIO, shape: tuple[int, ...]) -> np.ndarray:
    count = int(np.prod(shape))
    buf = f.read(count * 8)
    if len(buf) != count * 8:
        raise ValueError("truncated checkpoint")
    return np.frombuffer(buf, dtype="<f8").reshape(shape).copy()


def save_model(model: EmbeddingModel, f: BinaryIO) -> None:
    """Little-endian binary checkpoint; round-trips bit-exactly."""
    cfg = model.config
    flags = (1 if cfg.shared_embeddings else 0) | (_NORM_CODES[cfg.normalization] << 1)
    f.write(_CKPT_MAGIC)
    f.write(
        struct.pack(
            "<IQQIIdd",
            _CKPT_VERSION,
            model.vocab_v,
            model.oov_bins,
            cfg.embedding_dim,
            flags,
            cfg.bn_momentum,
            cfg.bn_epsilon,
        )
    )
    _write_array(f, model.query_matrix)
    if not cfg.shared_embeddings:
        _write_array(f, model.product_matrix)
    for state in (model.norm_query, model.norm_product):
        for a in (state.gamma, state.beta, state.running_mean, state.running_var):
            _write_array(f, a)


def load_model(f: BinaryIO) -> EmbeddingModel:
    magic = f.read(8)
    if magic != _CKPT_MAGIC:
        raise ValueError("not a model checkpoint (bad magic)")
    version, v, bins, n, flags, momentum, epsilon = struct.unpack(
        "<IQQIIdd", f.read(struct.calcsize("<IQQIIdd"))
    )
    if version != _CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    shared = bool(flags & 1)
    norm = _NORM_NAMES[(flags >> 1) & 0b11]
    cfg = ModelConfig(
        embedding_dim=n,
        shared_embeddings=shared,
        normalization=norm,
        bn_momentum=momentum,
        bn_epsilon=epsilon,
    )
    rows = v + bins + 1
    qm = _read_array(f, (rows, n))
    pm = qm if shared else _read_array(f, (rows, n))
    states = []
    for _ in range(2):
        vecs = [_read_array(f, (n,)) for _ in range(4)]
        states.append(NormState(*vecs))
    return EmbeddingModel(cfg, qm, pm, states[0], states[1], v, bins)


def serialize_model(model: EmbeddingModel) -> bytes:
    buf = io.BytesIO()
    save_model(model, buf)
    return buf.getvalue()


def model_fingerprint(model: EmbeddingModel) -> bytes:
    """32-byte digest identifying the exact parameter state."""
    return hashlib.sha256(serialize_model(model)).digest()
