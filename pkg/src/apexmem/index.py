"""Hybrid retrieval: dense vectors from a pluggable embedder plus BM25
lexical ranking over the store's lexical views, fused per query.
"""
from __future__ import annotations

import json
import math
import re
import zlib
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from .errors import DimensionMismatch, EmbedderFailure, UnknownView, ZeroVector
from .store import LEXICAL_VIEWS, Store

# index kinds and the store surface each one embeds
KINDS = ("entity", "property", "event", "evidence", "turn")

BM25_K1 = 1.2
BM25_B = 0.75
FUSION_ALPHA = 0.5
POOL_MULTIPLIER = 4

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> List[str]:
    return _TOKEN_RE.findall(text.lower())


class TrigramEmbedder:
    """Deterministic test embedder: hashed character-trigram frequencies,
    L2-normalized. No model download, same text always maps to the same
    vector."""

    dimension = 256

    def embed(self, text: str) -> np.ndarray:
        vector = np.zeros(self.dimension, dtype=np.float64)
        padded = f"  {text.lower()}  "
        for i in range(len(padded) - 2):
            trigram = padded[i : i + 3]
            bucket = zlib.crc32(trigram.encode("utf-8")) % self.dimension
            vector[bucket] += 1.0
        norm = np.linalg.norm(vector)
        if norm == 0.0:
            vector[0] = 1.0
            return vector
        return vector / norm


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"dimensions {a.shape} vs {b.shape}")
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroVector("cosine undefined for all-zero vectors")
    return float(np.dot(a, b) / (norm_a * norm_b))


def bm25_scores(
    corpus: List[Tuple[int, str]], query: str, k1: float = BM25_K1, b: float = BM25_B
) -> Dict[int, float]:
    """BM25 over (doc_id, text) pairs. Only docs with positive score appear."""
    if not corpus:
        return {}
    docs = [(doc_id, tokenize(text)) for doc_id, text in corpus]
    n_docs = len(docs)
    avgdl = sum(len(tokens) for _, tokens in docs) / n_docs
    doc_freq: Counter = Counter()
    for _, tokens in docs:
        for term in set(tokens):
            doc_freq[term] += 1
    query_terms = tokenize(query)
    scores: Dict[int, float] = {}
    for doc_id, tokens in docs:
        tf = Counter(tokens)
        length = len(tokens)
        score = 0.0
        for term in query_terms:
            freq = tf.get(term, 0)
            if freq == 0:
                continue
            df = doc_freq[term]
            idf = math.log(1.0 + (n_docs - df + 0.5) / (df + 0.5))
            denom = freq + k1 * (1.0 - b + b * length / avgdl) if avgdl else freq
            score += idf * freq * (k1 + 1.0) / denom
        if score > 0.0:
            scores[doc_id] = score
    return scores


def lexical_search(store: Store, view: str, query: str, k: int) -> List[Tuple[int, float]]:
    """Top-k (doc_id, BM25 score), ties broken by ascending doc_id."""
    corpus = _view_corpus(store, view)
    scores = bm25_scores(corpus, query)
    ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
    return ranked[:k]


def _view_corpus(store: Store, view: str) -> List[Tuple[int, str]]:
    if view in LEXICAL_VIEWS:
        return store.lexical_documents(view)
    if view == "properties":
        rows = store._conn.execute(
            "SELECT property_id, property_name, dtype,"
            " COALESCE(description, '') FROM properties ORDER BY property_id"
        ).fetchall()
        return [
            (row[0], f"{row[1].replace('_', ' ')} {row[1]} {row[2]} {row[3]}".strip())
            for row in rows
        ]
    raise UnknownView(f"unknown lexical view: {view}")


_KIND_VIEW = {
    "entity": "entities",
    "property": "properties",
    "event": "events",
    "evidence": "evidence",
    "turn": "turns",
}


def kind_documents(store: Store, kind: str) -> List[Tuple[int, str]]:
    """The (doc_id, text) surface that both channels index for one kind."""
    if kind not in KINDS:
        raise UnknownView(f"unknown kind: {kind}")
    return _view_corpus(store, _KIND_VIEW[kind])


class VectorIndex:
    """Flat, exhaustively scanned vector index persisted as a sidecar file."""

    def __init__(self, embedder=None, path: Optional[str] = None):
        self.embedder = embedder or TrigramEmbedder()
        self.path = path
        self.dimension = self.embedder.dimension
        self.entries: Dict[Tuple[str, int], np.ndarray] = {}
        if path is not None:
            self._load()

    @classmethod
    def sidecar_path(cls, store_path: str) -> str:
        return store_path + ".vec"

    def _load(self) -> None:
        import os

        if self.path is None or not os.path.exists(self.path):
            return
        with open(self.path, "r", encoding="utf-8") as handle:
            for line in handle:
                record = json.loads(line)
                self.entries[(record["kind"], record["doc_id"])] = np.array(
                    record["vector"], dtype=np.float64
                )

    def save(self) -> None:
        if self.path is None:
            return
        with open(self.path, "w", encoding="utf-8") as handle:
            for (kind, doc_id), vector in sorted(self.entries.items()):
                handle.write(
                    json.dumps(
                        {"kind": kind, "doc_id": doc_id, "vector": vector.tolist()}
                    )
                    + "\n"
                )

    def embed(self, text: str) -> np.ndarray:
        try:
            vector = np.asarray(self.embedder.embed(text), dtype=np.float64)
        except Exception as exc:
            raise EmbedderFailure(str(exc)) from exc
        if vector.shape != (self.dimension,):
            raise EmbedderFailure(
                f"embedder returned dimension {vector.shape}, expected {self.dimension}"
            )
        return vector

    def upsert(self, kind: str, doc_id: int, text: str) -> bool:
        key = (kind, doc_id)
        if key in self.entries:
            return False
        self.entries[key] = self.embed(text)
        return True

    def dense_scores(self, kind: str, query_vector: np.ndarray) -> Dict[int, float]:
        scores = {}
        for (entry_kind, doc_id), vector in self.entries.items():
            if entry_kind == kind:
                scores[doc_id] = cosine(query_vector, vector)
        return scores


def upsert_embeddings(
    store: Store, index: VectorIndex, since_sequence: int = 0
) -> int:
    """Index every base row missing from the vector index. Idempotent and
    resumable: partial progress is saved before an embedder failure
    propagates."""
    indexed = 0
    try:
        for kind in KINDS:
            for doc_id, text in kind_documents(store, kind):
                if index.upsert(kind, doc_id, text):
                    indexed += 1
    except EmbedderFailure:
        index.save()
        raise
    index.save()
    return indexed


def minmax_normalize(scores: Dict[int, float]) -> Dict[int, float]:
    """Min-max to [0,1]; a single candidate or all-equal scores map to 1.0."""
    if not scores:
        return {}
    low = min(scores.values())
    high = max(scores.values())
    if high == low:
        return {doc_id: 1.0 for doc_id in scores}
    return {doc_id: (s - low) / (high - low) for doc_id, s in scores.items()}


@dataclass(frozen=True)
class HybridScore:
    dense: float
    lexical: float
    fused: float


def hybrid_search(
    store: Store,
    index: VectorIndex,
    kinds: Iterable[str],
    query: str,
    k: int,
    alpha: float = FUSION_ALPHA,
) -> List[Tuple[int, str, HybridScore]]:
    """Fused ranking over the union of dense and lexical candidate pools."""
    if k < 1:
        raise ValueError("k must be >= 1")
    query_vector = index.embed(query)
    pool = POOL_MULTIPLIER * k
    results = []
    for kind in sorted(set(kinds)):
        if kind not in KINDS:
            raise UnknownView(f"unknown kind: {kind}")
        dense_all = index.dense_scores(kind, query_vector)
        dense_pool = sorted(dense_all.items(), key=lambda i: (-i[1], i[0]))[:pool]
        lexical_pool = lexical_search(store, _KIND_VIEW[kind], query, pool)
        lexical_all = dict(lexical_pool)
        candidates = {doc_id for doc_id, _ in dense_pool} | set(lexical_all)
        if not candidates:
            continue
        dense_raw = {doc_id: dense_all.get(doc_id, 0.0) for doc_id in candidates}
        lexical_raw = {doc_id: lexical_all.get(doc_id, 0.0) for doc_id in candidates}
        dense_norm = minmax_normalize(dense_raw)
        lexical_norm = minmax_normalize(lexical_raw)
        for doc_id in candidates:
            fused = alpha * dense_norm[doc_id] + (1.0 - alpha) * lexical_norm[doc_id]
            results.append(
                (
                    doc_id,
                    kind,
                    HybridScore(dense_raw[doc_id], lexical_raw[doc_id], fused),
                )
            )
    results.sort(key=lambda item: (-item[2].fused, item[1], item[0]))
    return results[:k]
