import json

import numpy as np
import pytest

from analysis.retrieval import (
    RetrievalRanking,
    activation_matrix,
    evaluate_rankings,
    load_judgments,
    score_documents,
    select_candidate_latents,
)
from catalog.latent_catalog import LatentCatalog, LatentCatalogEntry
from embeddings.embedding_store import SaeEmbedding
from exceptions import InvalidParameterError, RerankSubsetError
from gateway.tasks import AnnotationResult, ProviderKind, TaskKind


def emb(doc_id, pairs):
    ids, vals = zip(*pairs) if pairs else ((), ())
    return SaeEmbedding(doc_id, np.array(ids, dtype=np.int64), np.array(vals, dtype=float))


@pytest.fixture
def catalog():
    def unit(x, y):
        norm = np.hypot(x, y)
        return [x / norm, y / norm]

    return LatentCatalog(
        [
            LatentCatalogEntry(latent_id=1, label="rain", label_vec=unit(1, 0)),
            LatentCatalogEntry(latent_id=2, label="storms", label_vec=unit(1, 1)),
            LatentCatalogEntry(latent_id=3, label="tax law", label_vec=unit(0, 1)),
        ]
    )


def test_activation_matrix_columns():
    embs = [emb("a", [(1, 0.5), (4, 2.0)]), emb("b", [])]
    np.testing.assert_array_equal(activation_matrix(embs, [4, 1, 9]), [[2.0, 0.5, 0.0], [0.0, 0.0, 0.0]])


def test_scores_use_normalized_activations():
    embs = [emb("a", [(1, 2.0)]), emb("b", [(1, 1.0), (2, 4.0)]), emb("c", [(2, 1.0)])]
    ranking = score_documents(embs, [(1, 0.0), (2, 0.0)], temperature=1.0, query_id="q")
    # equal weights of 0.5: a = 0.5, b = 0.5 * 0.5 + 0.5 * 1, c = 0.5 * 0.25
    assert ranking.ranked_doc_ids == ["b", "a", "c"]
    assert ranking.scores == pytest.approx([0.75, 0.5, 0.125])
    assert [w for _, w in ranking.latents_used] == pytest.approx([0.5, 0.5])
    assert not ranking.degenerate


def test_small_temperature_follows_the_most_similar_latent(rng):
    values = rng.uniform(0.1, 1.0, size=(30, 3))
    embs = [emb(f"d{n:02d}", [(i, v) for i, v in enumerate(row)]) for n, row in enumerate(values)]
    ranking = score_documents(embs, [(0, 0.5), (1, 0.9), (2, 0.1)], temperature=1e-4)
    expected = [f"d{n:02d}" for n in np.argsort(-values[:, 1], kind="stable")]
    assert ranking.ranked_doc_ids == expected


def test_ties_break_by_doc_id():
    embs = [emb("z", [(1, 1.0)]), emb("a", [(1, 1.0)]), emb("m", [])]
    ranking = score_documents(embs, [(1, 1.0)], temperature=0.1)
    assert ranking.ranked_doc_ids == ["a", "z", "m"]


def test_inactive_candidates_are_degenerate():
    embs = [emb("b", [(5, 1.0)]), emb("a", [])]
    ranking = score_documents(embs, [(1, 1.0)], temperature=0.1)
    assert ranking.degenerate
    assert ranking.scores == [0.0, 0.0]
    assert ranking.ranked_doc_ids == ["a", "b"]


def test_scoring_parameters_are_checked():
    with pytest.raises(InvalidParameterError):
        score_documents([emb("a", [(1, 1.0)])], [], temperature=1.0)
    with pytest.raises(InvalidParameterError):
        score_documents([emb("a", [(1, 1.0)])], [(1, 1.0)], temperature=0.0)


def test_planted_relevance_gives_perfect_map(rng):
    embs, judgments = [], {}
    for n in range(40):
        relevant = n % 4 == 0
        pairs = [(1, float(rng.uniform(0.5, 1.0)))] if relevant else []
        pairs.append((7, float(rng.uniform(0.1, 1.0))))
        embs.append(emb(f"d{n:02d}", pairs))
        judgments.setdefault("q", {})[f"d{n:02d}"] = int(relevant)
    ranking = score_documents(embs, [(1, 0.9), (7, 0.1)], temperature=0.01, query_id="q")
    result = evaluate_rankings([ranking], judgments, k=10)
    assert result["map"] == pytest.approx(1.0)
    assert result["mp_at_k"] == pytest.approx(1.0)
    assert result["per_query"]["q"]["nap"] == pytest.approx(1.0)


def test_candidates_without_gateway(catalog):
    assert [i for i, _ in select_candidate_latents([1, 0], catalog, k_candidates=2)] == [1, 2]
    with pytest.raises(InvalidParameterError):
        select_candidate_latents([1, 0], catalog, k_candidates=0)


def test_mock_rerank_keeps_the_candidates(catalog, mock_gateway):
    plain = select_candidate_latents([1, 0], catalog, k_candidates=3)
    reranked = select_candidate_latents([1, 0], catalog, 3, gateway=mock_gateway, query_text="rain")
    assert reranked == plain


class StubGateway:
    def __init__(self, latent_ids):
        self.latent_ids = latent_ids

    def submit(self, task):
        return AnnotationResult(
            task_id=task.task_id,
            kind=TaskKind.RERANK,
            content={"latent_ids": self.latent_ids},
            provider=ProviderKind.MOCK,
        )


def test_rerank_reorders_and_drops(catalog):
    reranked = select_candidate_latents([1, 0], catalog, 3, gateway=StubGateway([3, 1, 3]))
    assert [i for i, _ in reranked] == [3, 1]


def test_rerank_outside_the_candidates_fails(catalog):
    with pytest.raises(RerankSubsetError) as info:
        select_candidate_latents([1, 0], catalog, 2, gateway=StubGateway([1, 99]))
    assert info.value.offending_ids == [99]


def test_evaluation_skips_unjudged_queries():
    judgments = {"q1": {"a": 1, "b": 0, "c": 1}, "q2": {"a": 0}}
    result = evaluate_rankings([("q1", ["a", "b", "c"]), ("q2", ["a"])], judgments, k=2)
    assert result["skipped_queries"] == ["q2"]
    assert result["n_queries"] == 1
    assert result["per_query"]["q1"]["ap"] == pytest.approx(5 / 6)
    assert result["per_query"]["q1"]["p_at_k"] == 0.5
    with pytest.raises(InvalidParameterError):
        evaluate_rankings([("q2", ["a"])], judgments)


def test_ranking_dict_round_trip_and_judgments(tmp_path):
    ranking = RetrievalRanking("q", ["a", "b"], [1.0, 0.5], [(3, 1.0)])
    assert RetrievalRanking.from_dict(json.loads(json.dumps(ranking.to_dict()))) == ranking
    path = tmp_path / "judgments.jsonl"
    path.write_text(
        "\n".join(
            json.dumps(r)
            for r in (
                {"query_id": "q", "doc_id": "a", "relevant": 1},
                {"query_id": "q", "doc_id": "b", "relevant": 0},
            )
        )
    )
    assert load_judgments(str(path)) == {"q": {"a": 1, "b": 0}}
