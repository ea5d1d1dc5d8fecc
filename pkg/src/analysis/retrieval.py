"""
Property-based retrieval: candidate latents from label-query similarity,
optional gateway rerank, temperature-weighted activation scoring, and the
evaluation of rankings against relevance judgments.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.special import softmax

from analysis.ranking_metrics import average_precision, mean_metrics, nap, precision_at_k
from catalog.latent_catalog import LatentCatalog
from data_models.record_validator import JudgmentRecord, QueryRecord, validate_records
from embeddings.embedding_store import SaeEmbedding
from exceptions import InvalidParameterError, RerankSubsetError
from gateway.tasks import AnnotationTask, TaskKind, make_task
from logger import get_logger

logger = get_logger(task_name=__name__)

Candidates = List[Tuple[int, float]]


@dataclass
class RetrievalRanking:
    """Full-corpus ranking for one query; scores non-increasing, ties by doc_id."""

    query_id: str
    ranked_doc_ids: List[str]
    scores: List[float]
    latents_used: List[Tuple[int, float]] = field(default_factory=list)
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "ranked_doc_ids": list(self.ranked_doc_ids),
            "scores": list(self.scores),
            "latents_used": [
                {"latent_id": i, "weight": w} for i, w in self.latents_used
            ],
            "degenerate": self.degenerate,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RetrievalRanking":
        return cls(
            query_id=data["query_id"],
            ranked_doc_ids=list(data["ranked_doc_ids"]),
            scores=[float(s) for s in data.get("scores", [])],
            latents_used=[
                (int(u["latent_id"]), float(u["weight"])) for u in data.get("latents_used", [])
            ],
            degenerate=bool(data.get("degenerate", False)),
        )


def make_rerank_task(query_text: str, candidates: Candidates, catalog: LatentCatalog) -> AnnotationTask:
    return make_task(
        TaskKind.RERANK,
        {
            "query": query_text,
            "candidates": [
                {"latent_id": int(i), "label": catalog.label(i) or ""} for i, _ in candidates
            ],
        },
    )


def select_candidate_latents(
    query_vec: Sequence[float],
    catalog: LatentCatalog,
    k_candidates: int = 50,
    gateway=None,
    query_text: str = "",
) -> Candidates:
    """
    The k_candidates latents whose labels are closest to the query; with a
    gateway, the rerank answer's subset and order replace them.

    Raises:
        RerankSubsetError: If the rerank answer names latents outside the candidates.
    """
    if k_candidates < 1:
        raise InvalidParameterError(f"k_candidates must be at least 1. Given {k_candidates}")
    candidates = catalog.top_k_latents(query_vec, k_candidates)
    if gateway is None:
        return candidates
    task = make_rerank_task(query_text, candidates, catalog)
    result = gateway.submit(task)
    similarity = dict(candidates)
    reranked = [int(i) for i in result.content["latent_ids"]]
    offending = [i for i in reranked if i not in similarity]
    if offending:
        raise RerankSubsetError(offending, task.task_id)
    seen, ordered = set(), []
    for latent_id in reranked:
        if latent_id not in seen:
            seen.add(latent_id)
            ordered.append((latent_id, similarity[latent_id]))
    if not ordered:
        raise RerankSubsetError([], task.task_id)
    return ordered


def activation_matrix(embs: Sequence[SaeEmbedding], latent_ids: Sequence[int]) -> np.ndarray:
    """Dense n_docs x len(latent_ids) matrix of pooled activations (0 when inactive)."""
    lengths = [len(e) for e in embs]
    indptr = np.zeros(len(embs) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum(lengths)
    ids = np.concatenate([e.latent_ids for e in embs]) if embs else np.empty(0, np.int64)
    vals = np.concatenate([e.values for e in embs]) if embs else np.empty(0)
    n_cols = max(int(ids.max()) + 1 if ids.size else 0, max(latent_ids, default=-1) + 1)
    matrix = sp.csr_matrix((vals, ids, indptr), shape=(len(embs), n_cols))
    return matrix[:, np.asarray(latent_ids, dtype=np.int64)].toarray()


def score_documents(
    embs: Sequence[SaeEmbedding],
    candidates: Candidates,
    temperature: float,
    query_id: str = "",
) -> RetrievalRanking:
    """
    score(d) = sum_i w_i * v_d,i / max_d' v_d',i with w = softmax(sim / T).

    Args:
        embs: Pooled embeddings of the corpus.
        candidates: (latent_id, similarity) pairs.
        temperature (float): T > 0; small T concentrates the weight on the
            most similar latent.
        query_id (str): Id carried into the ranking.

    Returns:
        RetrievalRanking: All documents, best first, ties by doc_id. Flagged
            degenerate when no candidate is active anywhere.
    """
    if not candidates:
        raise InvalidParameterError("Scoring needs at least one candidate latent")
    if temperature <= 0:
        raise InvalidParameterError(f"Temperature must be positive. Given {temperature}")
    latent_ids = [int(i) for i, _ in candidates]
    sims = np.array([s for _, s in candidates], dtype=np.float64)
    weights = softmax(sims / temperature)
    values = activation_matrix(embs, latent_ids)
    maxima = values.max(axis=0) if len(embs) else np.zeros(len(latent_ids))
    normalized = np.divide(values, maxima, out=np.zeros_like(values), where=maxima > 0)
    scores = normalized @ weights
    doc_ids = np.array([e.doc_id for e in embs])
    order = np.lexsort((doc_ids, -scores)) if len(embs) else np.empty(0, np.int64)
    degenerate = not np.any(maxima > 0)
    if degenerate:
        logger.warning(f"Query '{query_id}': no candidate latent is active in the corpus")
    return RetrievalRanking(
        query_id=query_id,
        ranked_doc_ids=[str(doc_ids[o]) for o in order],
        scores=[float(scores[o]) for o in order],
        latents_used=[(i, float(w)) for i, w in zip(latent_ids, weights)],
        degenerate=degenerate,
    )


def load_queries(path: str, lenient: bool = False) -> List[QueryRecord]:
    return validate_records(path, QueryRecord, lenient=lenient, logger=logger)


def load_judgments(path: str, lenient: bool = False) -> Dict[str, Dict[str, int]]:
    """query_id -> {doc_id: 0|1}."""
    judgments: Dict[str, Dict[str, int]] = {}
    for record in validate_records(path, JudgmentRecord, lenient=lenient, logger=logger):
        judgments.setdefault(record.query_id, {})[record.doc_id] = record.relevant
    return judgments


def evaluate_rankings(
    rankings: Sequence[Union[RetrievalRanking, Tuple[str, Sequence[str]]]],
    judgments: Dict[str, Dict[str, int]],
    k: int = 50,
) -> dict:
    """
    AP, P@k and NAP per query plus MAP and MP@k. NAP's base rate is the share
    of relevant documents in the ranking. Queries without any relevant
    judgment are skipped with a warning.

    Returns:
        {"per_query": {query_id: {...}}, "map": float, "mp_at_k": float,
         "k": int, "n_queries": int, "skipped_queries": [...]}
    """
    per_query, skipped = {}, []
    for ranking in rankings:
        if isinstance(ranking, RetrievalRanking):
            query_id, ranked = ranking.query_id, ranking.ranked_doc_ids
        else:
            query_id, ranked = ranking
        relevant = {d for d, r in judgments.get(query_id, {}).items() if r == 1}
        if not relevant:
            logger.warning(f"Query '{query_id}' has no relevant documents; skipped")
            skipped.append(query_id)
            continue
        flags = [doc_id in relevant for doc_id in ranked]
        ap = average_precision(flags, len(relevant))
        base_rate = len(relevant) / max(len(ranked), len(relevant))
        per_query[query_id] = {
            "ap": ap,
            "p_at_k": precision_at_k(flags, k),
            "nap": nap(ap, base_rate) if base_rate < 1 else None,
            "n_relevant": len(relevant),
            "base_rate": base_rate,
        }
    if not per_query:
        raise InvalidParameterError("No query has relevance judgments to evaluate")
    mean_ap, mean_p = mean_metrics(
        [m["ap"] for m in per_query.values()], [m["p_at_k"] for m in per_query.values()]
    )
    return {
        "per_query": per_query,
        "map": mean_ap,
        "mp_at_k": mean_p,
        "k": k,
        "n_queries": len(per_query),
        "skipped_queries": skipped,
    }
