"""Exact hybrid retrieval: BM25 lexical scoring fused with cosine similarity.

Scoring is exhaustive over the instance's chunks (no approximate index), so
results are exactly reproducible. The fused score is

    score = lambda * norm_lex + (1 - lambda) * norm_vec

where norm_lex min-max normalizes BM25 over the candidate pool (an all-equal
pool maps to 0.5) and norm_vec maps cosine from [-1, 1] onto [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, EmptyInstance, InvalidField
from .hashing import stable_u64
from .world_model import WorldModelInstance, normalize_text

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75
DEFAULT_LAMBDA = 0.5
DEFAULT_EMBEDDING_DIM = 32


def tokenize(text: str) -> list[str]:
    return normalize_text(text).lower().split()


@dataclass
class CorpusStats:
    """Document-frequency statistics over one candidate pool."""

    n_chunks: int
    avg_len: float
    df: dict = field(default_factory=dict)        # term -> chunks containing it
    lengths: dict = field(default_factory=dict)   # chunk id -> token count


def build_stats(chunks) -> CorpusStats:
    df: dict[str, int] = {}
    lengths: dict[str, int] = {}
    total = 0
    for chunk in chunks:
        tokens = tokenize(chunk.text)
        lengths[chunk.id] = len(tokens)
        total += len(tokens)
        for term in set(tokens):
            df[term] = df.get(term, 0) + 1
    n = len(lengths)
    return CorpusStats(n_chunks=n, avg_len=(total / n) if n else 0.0, df=df, lengths=lengths)


def bm25_score(query_terms, chunk, stats: CorpusStats,
               k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> float:
    """BM25 with the +1 idf variant: idf = ln((N - df + 0.5)/(df + 0.5) + 1).

    Duplicate query terms contribute once per occurrence (per-occurrence
    summation). The +1 keeps idf, and hence scores, non-negative.
    """
    tokens = tokenize(chunk.text)
    if not tokens:
        return 0.0
    counts: dict[str, int] = {}
    for t in tokens:
        counts[t] = counts.get(t, 0) + 1
    length = len(tokens)
    norm = k1 * (1.0 - b + b * length / stats.avg_len) if stats.avg_len > 0 else k1
    score = 0.0
    for term in query_terms:
        term = term.lower()
        tf = counts.get(term, 0)
        if tf == 0:
            continue
        dfreq = stats.df.get(term, 0)
        idf = math.log((stats.n_chunks - dfreq + 0.5) / (dfreq + 0.5) + 1.0)
        score += idf * tf * (k1 + 1.0) / (tf + norm)
    return score


def cosine(u, v) -> float:
    """Cosine similarity; 0.0 whenever either vector has zero norm."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionMismatch(f"cosine over shapes {u.shape} and {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


class HashEmbedder:
    """Deterministic test embedder.

    Each token maps to a pseudo-random unit vector seeded by the token's
    hash; a text embeds to the L2-normalized mean of its token vectors, and
    empty text embeds to the zero vector. No trained weights, fully stable
    across processes.
    """

    def __init__(self, dim: int = DEFAULT_EMBEDDING_DIM, seed: int = 0):
        if dim <= 0:
            raise InvalidField("embedder dim must be positive")
        self.dim = dim
        self.seed = seed
        self._token_cache: dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._token_cache.get(token)
        if vec is None:
            rng = np.random.default_rng(stable_u64("token", self.seed, token))
            raw = rng.standard_normal(self.dim)
            vec = raw / np.linalg.norm(raw)
            self._token_cache[token] = vec
        return vec

    def embed(self, text: str) -> np.ndarray:
        tokens = tokenize(text)
        if not tokens:
            return np.zeros(self.dim)
        acc = np.zeros(self.dim)
        for token in tokens:
            acc += self._token_vector(token)
        acc /= len(tokens)
        norm = np.linalg.norm(acc)
        return acc / norm if norm > 0 else np.zeros(self.dim)


@dataclass(frozen=True)
class HybridConfig:
    lambda_: float = DEFAULT_LAMBDA
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B
    top_k: int = 10
    embedding_dim: int = DEFAULT_EMBEDDING_DIM

    def __post_init__(self):
        if not (0.0 <= self.lambda_ <= 1.0):
            raise InvalidField("lambda must lie in [0, 1]")
        if self.top_k <= 0:
            raise InvalidField("top_k must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "HybridConfig":
        return cls(
            lambda_=float(d.get("lambda", DEFAULT_LAMBDA)),
            k1=float(d.get("k1", DEFAULT_K1)),
            b=float(d.get("b", DEFAULT_B)),
            top_k=int(d.get("top_k", 10)),
            embedding_dim=int(d.get("embedding_dim", DEFAULT_EMBEDDING_DIM)),
        )


def _minmax(scores: np.ndarray) -> np.ndarray:
    lo = float(scores.min())
    hi = float(scores.max())
    if hi > lo:
        return (scores - lo) / (hi - lo)
    return np.full_like(scores, 0.5)


def hybrid_search(instance: WorldModelInstance, query: str, cfg: HybridConfig,
                  embedder) -> list:
    """Score every chunk, fuse, and return the top_k as (chunk, score) pairs.

    The candidate pool is the whole instance; ties break by
    (source_id, position). With lambda 1 (or 0) the ordering degenerates to
    pure BM25 (or pure cosine) under the same tie-break.
    """
    chunks = instance.all_chunks()
    if not chunks:
        raise EmptyInstance(f"instance {instance.instance_id} has no chunks")
    stats = build_stats(chunks)
    terms = tokenize(query)
    lex = np.array([bm25_score(terms, c, stats, cfg.k1, cfg.b) for c in chunks])
    qvec = embedder.embed(query)
    vec = np.array([cosine(qvec, embedder.embed(c.text)) for c in chunks])
    fused = cfg.lambda_ * _minmax(lex) + (1.0 - cfg.lambda_) * ((vec + 1.0) / 2.0)
    order = sorted(range(len(chunks)),
                   key=lambda i: (-fused[i], chunks[i].source_id, chunks[i].position))
    return [(chunks[i], float(fused[i])) for i in order[:cfg.top_k]]
