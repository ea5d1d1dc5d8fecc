from itertools import permutations

import numpy as np
import pytest
import scipy.sparse as sp
from sklearn.metrics import adjusted_rand_score

from analysis.clustering import (
    ClusterResult,
    align_clusters,
    cluster_embeddings,
    conductance,
    conductance_zscore,
    confusion_matrix,
    describe_cluster,
    jaccard_matrix,
    judged_assignment,
    make_assign_cluster_task,
    per_cluster_accuracy,
    spectral_cluster,
    targeted_cluster,
)
from catalog.latent_catalog import LatentCatalog, LatentCatalogEntry
from embeddings.embedding_store import BinaryEmbedding, SaeEmbedding, binarize
from exceptions import CorpusMismatchError, EmptyCorpusError, InvalidParameterError


def binary(doc_id, ids):
    return BinaryEmbedding(doc_id, np.array(ids, dtype=np.int64))


def block_embeddings(rng, n_blocks=3, per_block=20, offset=0):
    """Documents of disjoint latent blocks; every document carries its block's anchor latent."""
    embs, truth = [], []
    for block in range(n_blocks):
        base = offset + block * 100
        for n in range(per_block):
            ids = np.concatenate([[base], base + 1 + rng.choice(10, size=4, replace=False)])
            ids = np.sort(ids)
            embs.append(SaeEmbedding(f"b{block}-{n:02d}", ids, np.ones(ids.size)))
            truth.append(block)
    order = rng.permutation(len(embs))
    return [embs[o] for o in order], np.array(truth)[order]


def test_jaccard_values():
    sim = jaccard_matrix([binary("a", [1, 2, 3]), binary("b", [2, 3, 4]), binary("c", []), binary("d", [])])
    assert sim[0, 1] == sim[1, 0] == 0.5
    assert sim[2, 3] == 0.0
    assert sim[0, 2] == 0.0
    np.testing.assert_array_equal(np.diag(sim), 1.0)


def test_jaccard_parallel_matches_serial(rng):
    embs = [binary(str(n), rng.choice(30, size=5, replace=False)) for n in range(40)]
    np.testing.assert_array_equal(jaccard_matrix(embs, n_jobs=4), jaccard_matrix(embs, n_jobs=1))


def test_jaccard_needs_two_documents():
    with pytest.raises(InvalidParameterError):
        jaccard_matrix([binary("a", [1])])


def test_planted_blocks_are_recovered(rng):
    embs, truth = block_embeddings(rng)
    result, similarity = cluster_embeddings(embs, k=3, seed=0)
    assert result.n_clusters == 3
    assert adjusted_rand_score(truth, result.labels) == 1.0
    assert similarity.shape == (60, 60)
    assert all(s > 0 for s in result.similarity_stats)


def test_clustering_is_deterministic(rng):
    embs, _ = block_embeddings(rng, per_block=10)
    first, _ = cluster_embeddings(embs, k=3, seed=5)
    second, _ = cluster_embeddings(embs, k=3, seed=5)
    np.testing.assert_array_equal(first.labels, second.labels)
    # clusters are numbered in order of their first member
    assert first.labels[0] == 0


def test_parameter_checks():
    sim = np.eye(3)
    with pytest.raises(InvalidParameterError):
        spectral_cluster(sim, k=1)
    with pytest.raises(InvalidParameterError):
        spectral_cluster(sim, k=4)
    with pytest.raises(InvalidParameterError):
        spectral_cluster(np.array([[1.0, 0.2], [0.3, 1.0]]), k=2)
    with pytest.raises(InvalidParameterError):
        spectral_cluster(np.array([[1.0, 2.0], [2.0, 1.0]]), k=2)


def test_k_equal_to_n_gives_singletons():
    result = spectral_cluster(np.eye(4), k=4, doc_ids=list("abcd"))
    assert result.assignment == {"a": 0, "b": 1, "c": 2, "d": 3}


def test_isolated_document_joins_the_largest_of_equally_near_clusters():
    embs = [binary(f"big{n}", [1, 2, 10 + n]) for n in range(5)]
    embs += [binary(f"small{n}", [50, 51, 60 + n]) for n in range(3)]
    embs += [binary("loner", [99])]
    result = spectral_cluster(jaccard_matrix(embs), k=2, doc_ids=[e.doc_id for e in embs])
    assignment = result.assignment
    assert assignment["loner"] == assignment["big0"]
    assert assignment["small0"] != assignment["big0"]
    assert result.n_clusters == 2


def test_isolated_document_tie_goes_to_the_lower_cluster_id():
    block = np.full((3, 3), 0.5)
    similarity = np.zeros((7, 7))
    similarity[:3, :3] = block
    similarity[3:6, 3:6] = block
    np.fill_diagonal(similarity, 1.0)
    result = spectral_cluster(similarity, k=2)
    assert result.labels.tolist() == [0, 0, 0, 1, 1, 1, 0]


def test_empty_documents_are_dropped(rng):
    embs, _ = block_embeddings(rng, n_blocks=2, per_block=5)
    embs.append(SaeEmbedding("empty", np.array([]), np.array([])))
    result, _ = cluster_embeddings(embs, k=2)
    assert result.dropped_doc_ids == ["empty"]
    assert "empty" not in result.assignment
    with pytest.raises(EmptyCorpusError):
        cluster_embeddings([SaeEmbedding("e", np.array([]), np.array([]))] * 2, k=2)


def test_targeted_clustering_follows_the_keyphrase_axis(rng):
    # topic blocks use latents 0.., style blocks 1000..; each doc has one of each
    n_docs = 40
    topic = rng.integers(0, 2, size=n_docs)
    style = rng.integers(0, 2, size=n_docs)
    embs = []
    for n in range(n_docs):
        ids = np.array([100 * topic[n], 100 * topic[n] + 1, 1000 + 100 * style[n], 1001 + 100 * style[n]])
        embs.append(SaeEmbedding(f"d{n}", ids, np.ones(4)))
    style_ids = [1000, 1001, 1100, 1101]
    catalog = LatentCatalog(
        [LatentCatalogEntry(latent_id=i, label=f"style {i}", label_vec=[1.0, 0.0]) for i in style_ids]
        + [LatentCatalogEntry(latent_id=i, label=f"topic {i}", label_vec=[0.0, 1.0]) for i in (0, 1, 100, 101)]
    )
    result, _, selected = targeted_cluster(embs, catalog, [[1.0, 0.0]], k_latents=4, k_clusters=2)
    assert selected == set(style_ids)
    assert adjusted_rand_score(style, result.labels) == 1.0


def test_describe_cluster(rng):
    embs, truth = block_embeddings(rng, n_blocks=2, per_block=8)
    result, similarity = cluster_embeddings(embs, k=2)
    binaries = [binarize(e) for e in embs]
    description = describe_cluster(0, result, binaries, similarity, n_top_latents=3, n_central=2)
    anchor = 100 * int(truth[result.members(0)[0]])
    assert description.top_latents[0].latent_id == anchor
    assert description.top_latents[0].delta == 1.0
    assert len(description.central_doc_ids) == 2
    assert set(description.central_doc_ids) <= {result.doc_ids[o] for o in result.members(0)}
    whole = ClusterResult(1, result.doc_ids, np.zeros(len(result.doc_ids), dtype=int), [0.0], 0)
    with pytest.raises(InvalidParameterError):
        describe_cluster(0, whole, binaries, similarity)


def test_conductance_of_a_disconnected_part():
    graph = sp.csr_matrix(np.array([[0, 1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=float))
    assert conductance(graph, [0, 1]) == 0.0
    assert conductance(graph, [0, 2]) == 1.0


def test_tight_cluster_has_negative_conductance_z(rng):
    centers = np.eye(10)[:3] * 5
    vecs = np.vstack([centers[b] + rng.normal(scale=0.3, size=(20, 10)) for b in range(3)])
    z = conductance_zscore(np.arange(20), vecs, n_random=50, knn_k=5, seed=1)
    assert z < -2
    with pytest.raises(InvalidParameterError):
        conductance_zscore([0], vecs)


@pytest.mark.parametrize("seed", range(10))
def test_random_member_set_has_a_small_conductance_z(seed):
    rng = np.random.default_rng(seed)
    vecs = rng.standard_normal((200, 16))
    members = rng.choice(200, size=30, replace=False)
    z = conductance_zscore(members, vecs, n_random=100, knn_k=10, seed=seed + 1)
    assert abs(z) < 4


def test_alignment_matches_brute_force(rng):
    for _ in range(100):
        confusion = rng.integers(0, 20, size=(5, 5))
        mapping = align_clusters(confusion)
        best = max(sum(confusion[r, p[r]] for r in range(5)) for p in permutations(range(5)))
        assert sum(confusion[r, c] for r, c in mapping.items()) == best
        assert sorted(mapping.values()) == list(range(5))


def test_alignment_with_more_clusters_than_labels():
    confusion = confusion_matrix([0, 0, 1, 2, 2], [1, 1, 0, 0, 0])
    assert confusion.shape == (3, 2)
    mapping = align_clusters(confusion)
    assert mapping[0] == 1 and mapping[2] == 0
    assert 1 not in mapping


def test_per_cluster_accuracy():
    original = {"a": 0, "b": 0, "c": 1, "d": 1}
    judged = {"a": 0, "b": 1, "c": 1, "d": 1}
    assert per_cluster_accuracy(original, judged) == {0: 0.5, 1: 1.0}
    with pytest.raises(CorpusMismatchError):
        per_cluster_accuracy(original, {"a": 0})


def test_judged_assignment_from_mock(mock_gateway):
    labels = ["finance", "sports", "weather"]
    tasks = [make_assign_cluster_task(labels, text) for text in ("stocks fell", "rain today")]
    results = mock_gateway.submit_batch(tasks)
    judged = judged_assignment(["x", "y"], results)
    assert all(0 <= c < 3 for c in judged.values())
    assert judged_assignment(["z"], [InvalidParameterError("failed")]) == {"z": -1}
