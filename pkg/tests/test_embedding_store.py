import numpy as np
import pytest

from embeddings.embedding_store import (
    BinaryEmbedding,
    SaeEmbedding,
    binarize,
    binary_matrix,
    build_index,
    filter_latents,
    latent_frequency,
    pool_corpus,
    pool_document,
)
from exceptions import EmptyCorpusError, InputError, InvalidParameterError


def test_max_pooling_takes_the_largest_value(doc_factory):
    doc = doc_factory("a", [[(7, 0.2)], [(3, 1.0), (7, 0.7)], [(7, 0.1)]])
    emb = pool_document(doc)
    assert emb.entries == [(3, 1.0), (7, 0.7)]
    assert emb.value_of(7) == 0.7
    assert emb.value_of(5) == 0.0


def test_pooling_equals_elementwise_max(random_docs):
    for doc in random_docs(n_docs=10, d_sae=20):
        dense = np.zeros((len(doc.tokens), 20))
        for row, token in enumerate(doc.tokens):
            dense[row, token.latent_ids] = token.values
        expected = dense.max(axis=0)
        emb = pool_document(doc)
        np.testing.assert_array_equal(emb.latent_ids, np.flatnonzero(expected))
        np.testing.assert_array_equal(emb.values, expected[expected > 0])


def test_document_without_active_latents_pools_to_empty(doc_factory):
    emb = pool_document(doc_factory("quiet", [[], []]))
    assert len(emb) == 0
    assert len(binarize(emb)) == 0


def test_document_without_tokens_is_rejected(doc_factory):
    with pytest.raises(EmptyCorpusError):
        pool_document(doc_factory("nothing", []))


def test_parallel_pooling_preserves_order(random_docs):
    docs = random_docs(n_docs=30)
    assert pool_corpus(docs, n_jobs=4) == pool_corpus(docs, n_jobs=1)


def test_embedding_validates_entries():
    with pytest.raises(InvalidParameterError):
        SaeEmbedding("x", np.array([2, 1]), np.array([1.0, 1.0]))
    with pytest.raises(InvalidParameterError):
        SaeEmbedding("x", np.array([1]), np.array([-1.0]))


def test_binarize_keeps_active_ids():
    emb = SaeEmbedding("x", np.array([1, 4, 9]), np.array([0.1, 2.0, 0.5]))
    assert binarize(emb).as_set() == {1, 4, 9}


def test_index_postings_and_frequency(index_factory):
    idx = index_factory({"a": [1, 2], "b": [2], "c": [], "d": [2, 5]})
    assert idx.n_docs == 4
    np.testing.assert_array_equal(idx.posting(2), [0, 1, 3])
    assert latent_frequency(idx, 2) == 0.75
    assert latent_frequency(idx, 1) == 0.25
    assert latent_frequency(idx, 99) == 0.0
    assert idx.frequencies() == {1: 0.25, 2: 0.75, 5: 0.25}


def test_index_inverts_back_to_embeddings(index_factory):
    sets = {"a": [1, 2], "b": [2], "c": [], "d": [2, 5]}
    idx = index_factory(sets)
    assert {e.doc_id: e.as_set() for e in idx.to_embeddings()} == {
        k: set(v) for k, v in sets.items()
    }


def test_index_rejects_duplicate_doc_ids():
    embs = [BinaryEmbedding("a", np.array([1])), BinaryEmbedding("a", np.array([2]))]
    with pytest.raises(InputError, match="Duplicate"):
        build_index(embs)


def test_empty_index_has_no_frequency():
    idx = build_index([])
    assert idx.n_docs == 0
    with pytest.raises(EmptyCorpusError):
        latent_frequency(idx, 0)


def test_merge_shifts_ordinals(index_factory):
    left = index_factory({"a": [1], "b": [2]})
    right = index_factory({"c": [1, 2]})
    merged = left.merge(right)
    assert merged.doc_ids == ("a", "b", "c")
    np.testing.assert_array_equal(merged.posting(1), [0, 2])
    np.testing.assert_array_equal(merged.posting(2), [1, 2])
    with pytest.raises(InputError):
        left.merge(left)


def test_subset_renumbers_in_given_order(index_factory):
    idx = index_factory({"a": [1], "b": [2], "c": [1, 3]})
    sub = idx.subset([2, 0])
    assert sub.doc_ids == ("c", "a")
    np.testing.assert_array_equal(sub.posting(1), [0, 1])
    assert sub.document_frequency(2) == 0


def test_csc_columns_follow_requested_latents(index_factory):
    idx = index_factory({"a": [1], "b": [2], "c": [1, 3]})
    dense = idx.to_csc([3, 1, 7]).toarray()
    np.testing.assert_array_equal(dense, [[0, 1, 0], [0, 0, 0], [1, 1, 0]])


def test_filter_latents():
    emb = SaeEmbedding("x", np.array([1, 4, 9]), np.array([0.1, 2.0, 0.5]))
    assert filter_latents(emb, [9, 1]).entries == [(1, 0.1), (9, 0.5)]
    assert len(filter_latents(emb, [])) == 0


def test_binary_matrix_columns_are_latent_ids():
    embs = [BinaryEmbedding("a", np.array([0, 3])), BinaryEmbedding("b", np.array([]))]
    matrix = binary_matrix(embs, n_cols=5)
    assert matrix.shape == (2, 5)
    np.testing.assert_array_equal(matrix.toarray(), [[1, 0, 0, 1, 0], [0, 0, 0, 0, 0]])
