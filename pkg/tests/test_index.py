import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from apexmem.errors import DimensionMismatch, ZeroVector
from apexmem.index import (
    BM25_B,
    BM25_K1,
    TrigramEmbedder,
    VectorIndex,
    bm25_scores,
    cosine,
    hybrid_search,
    lexical_search,
    minmax_normalize,
    tokenize,
    upsert_embeddings,
)
from conftest import ingest_case1


def oracle_bm25(corpus, query):
    """Independent textbook BM25 implementation."""
    docs = {doc_id: tokenize(text) for doc_id, text in corpus}
    n = len(docs)
    avgdl = sum(len(t) for t in docs.values()) / n if n else 0.0
    query_terms = tokenize(query)
    scores = {}
    for doc_id, terms in docs.items():
        score = 0.0
        for term in set(query_terms):
            df = sum(1 for t in docs.values() if term in t)
            if df == 0:
                continue
            idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
            tf = terms.count(term)
            denom = tf + BM25_K1 * (1 - BM25_B + BM25_B * len(terms) / avgdl)
            score += idf * (tf * (BM25_K1 + 1)) / denom
        if score > 0.0:
            scores[doc_id] = score
    return scores


def test_tokenize_lowercases_and_splits():
    assert tokenize("Hello, World! foo_bar 42") == ["hello", "world", "foo", "bar", "42"]


def test_bm25_matches_oracle_small():
    corpus = [
        (1, "the quick brown fox"),
        (2, "the lazy dog sleeps"),
        (3, "quick quick fox runs"),
    ]
    got = bm25_scores(corpus, "quick fox")
    want = oracle_bm25(corpus, "quick fox")
    assert set(got) == set(want)
    for doc_id in want:
        assert got[doc_id] == pytest.approx(want[doc_id], abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(
        st.text(alphabet="abcdef ", min_size=1, max_size=30), min_size=1, max_size=20
    ),
    st.text(alphabet="abcdef ", min_size=1, max_size=15),
)
def test_bm25_matches_oracle_property(texts, query):
    corpus = [(i, t) for i, t in enumerate(texts) if tokenize(t)]
    if not corpus:
        return
    got = bm25_scores(corpus, query)
    want = oracle_bm25(corpus, query)
    assert set(got) == set(want)
    for doc_id in want:
        assert abs(got[doc_id] - want[doc_id]) < 1e-9


def test_trigram_embedder_deterministic_and_normalized():
    embedder = TrigramEmbedder()
    a = embedder.embed("Italian Garden")
    b = embedder.embed("Italian Garden")
    assert np.array_equal(a, b)
    assert a.shape == (embedder.dimension,)
    assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-9)


def test_cosine_errors():
    with pytest.raises(DimensionMismatch):
        cosine(np.ones(3), np.ones(4))
    with pytest.raises(ZeroVector):
        cosine(np.zeros(3), np.ones(3))


def test_cosine_bounds():
    embedder = TrigramEmbedder()
    a = embedder.embed("sushi restaurant")
    b = embedder.embed("sushi place")
    assert -1.0 - 1e-9 <= cosine(a, b) <= 1.0 + 1e-9
    assert cosine(a, a) == pytest.approx(1.0, abs=1e-9)


def test_minmax_normalize_degenerate_is_one():
    assert minmax_normalize({1: 0.7}) == {1: 1.0}
    assert minmax_normalize({1: 0.5, 2: 0.5}) == {1: 1.0, 2: 1.0}
    assert minmax_normalize({}) == {}


def test_minmax_normalize_spreads_to_unit_interval():
    got = minmax_normalize({1: 2.0, 2: 4.0, 3: 3.0})
    assert got == {1: 0.0, 2: 1.0, 3: 0.5}


def test_lexical_search_over_store(store, index):
    ingest_case1(store, index)
    store.rebuild_lexical_views()
    hits = lexical_search(store, "entities", "sakura sushi", k=3)
    assert hits
    top_id = hits[0][0]
    assert store.entity_row(top_id)["entity_name"] == "Sakura Sushi"


def test_vector_index_upsert_idempotent(store, index):
    ingest_case1(store, index)
    seen = upsert_embeddings(store, index)
    again = upsert_embeddings(store, index)
    assert again == 0 or again <= seen  # second pass adds nothing new
    before = dict(index.entries)
    upsert_embeddings(store, index)
    assert set(index.entries) == set(before)


def test_vector_index_persistence(tmp_path, store):
    path = str(tmp_path / "db.sqlite")
    disk_store = type(store).open(path)
    index = VectorIndex(path=VectorIndex.sidecar_path(path))
    ingest_case1(disk_store, index)
    index.save()
    reloaded = VectorIndex(path=VectorIndex.sidecar_path(path))
    assert set(reloaded.entries) == set(index.entries)
    for key, vec in index.entries.items():
        assert np.allclose(reloaded.entries[key], vec)
    disk_store.close()


def test_hybrid_search_finds_entity(store, index):
    ingest_case1(store, index)
    results = hybrid_search(store, index, ("entity",), "Sakura Sushi", k=3)
    assert results
    doc_id, kind, score = results[0]
    assert kind == "entity"
    assert store.entity_row(doc_id)["entity_name"] == "Sakura Sushi"
    assert 0.0 <= score.fused <= 1.0


def test_hybrid_dense_matches_brute_force(store, index):
    ingest_case1(store, index)
    embedder = TrigramEmbedder()
    query_vec = embedder.embed("Sakura Sushi")
    results = hybrid_search(store, index, ("entity",), "Sakura Sushi", k=10)
    for doc_id, _, score in results:
        doc_vec = index.entries[("entity", doc_id)]
        assert score.dense == pytest.approx(cosine(query_vec, doc_vec), abs=1e-9)
