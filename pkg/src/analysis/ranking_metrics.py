"""Ranking evaluation and rank aggregation: AP, P@K, MAP, NAP, RRF and RBO."""
import math
from collections import defaultdict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from exceptions import InvalidParameterError


def average_precision(flags: Sequence[bool], n_relevant: int) -> float:
    """
    Mean, over the ranks of relevant hits, of the precision at that rank,
    divided over all n_relevant documents (relevant documents never
    retrieved contribute 0).

    Args:
        flags: Relevance of each ranked document, best first.
        n_relevant (int): Number of relevant documents for the query.

    Returns:
        float: AP in [0, 1].
    """
    if n_relevant < 1:
        raise InvalidParameterError("Average precision needs at least one relevant document")
    hits = np.asarray(flags, dtype=bool)
    if hits.sum() > n_relevant:
        raise InvalidParameterError(
            f"{int(hits.sum())} relevant hits exceed n_relevant={n_relevant}"
        )
    ranks = np.flatnonzero(hits) + 1
    precisions = np.arange(1, ranks.size + 1) / ranks
    return float(precisions.sum() / n_relevant)


def precision_at_k(flags: Sequence[bool], k: int) -> float:
    """Hits among the top k over k; a ranking shorter than k is padded with misses."""
    if k < 1:
        raise InvalidParameterError(f"k must be at least 1. Given {k}")
    return float(np.count_nonzero(np.asarray(flags[:k], dtype=bool)) / k)


def mean_metrics(
    average_precisions: Sequence[float], precisions_at_k: Sequence[float]
) -> Tuple[float, float]:
    """
    Returns:
        (MAP, MP@K) over the queries.
    """
    if len(average_precisions) == 0 or len(average_precisions) != len(precisions_at_k):
        raise InvalidParameterError("Need one AP and one P@K per query, at least one query")
    return float(np.mean(average_precisions)), float(np.mean(precisions_at_k))


def nap(ap: float, f: float) -> float:
    """AP rescaled by the base rate f: (ap - f) / (1 - f)."""
    if f >= 1:
        raise InvalidParameterError(f"Base rate must be below 1. Given {f}")
    return (ap - f) / (1 - f)


def rrf_fuse(rankings: Sequence[Sequence[str]], k_rrf: int = 60) -> List[Tuple[str, float]]:
    """
    Reciprocal rank fusion: score(d) = sum over rankings of 1 / (k_rrf + rank(d)),
    ranks starting at 1. A document missing from a ranking gets nothing from it.

    Returns:
        (doc_id, score) pairs, descending, ties by doc_id.
    """
    if len(rankings) < 2:
        raise InvalidParameterError("Fusion needs at least two rankings")
    if k_rrf < 0:
        raise InvalidParameterError(f"k_rrf must be non-negative. Given {k_rrf}")
    contributions: Dict[str, List[float]] = defaultdict(list)
    for ranking in rankings:
        for rank, doc_id in enumerate(ranking, start=1):
            contributions[doc_id].append(1.0 / (k_rrf + rank))
    # fsum keeps the fused score independent of the order of the input rankings
    fused = [(doc_id, math.fsum(parts)) for doc_id, parts in contributions.items()]
    return sorted(fused, key=lambda pair: (-pair[1], pair[0]))


def rbo(
    ranking_a: Sequence[str],
    ranking_b: Sequence[str],
    p: float = 0.98,
    depth: Optional[int] = None,
) -> float:
    """
    Truncated rank-biased overlap, normalized so identical prefixes score 1:

        sum_{d=1..D} p^(d-1) |A_d & B_d| / d  /  sum_{d=1..D} p^(d-1)

    Args:
        ranking_a, ranking_b: Rankings, best first.
        p (float): Persistence in (0, 1).
        depth (int): Evaluation depth D; clamped to the longer ranking.

    Returns:
        float: RBO in [0, 1].
    """
    if not 0 < p < 1:
        raise InvalidParameterError(f"p must be in (0, 1). Given {p}")
    longest = max(len(ranking_a), len(ranking_b))
    depth = longest if depth is None else min(depth, longest)
    if depth < 1:
        raise InvalidParameterError("RBO needs a depth of at least 1")
    seen_a, seen_b = set(), set()
    overlap = 0
    weighted, normalizer = 0.0, 0.0
    for d in range(1, depth + 1):
        a = ranking_a[d - 1] if d <= len(ranking_a) else None
        b = ranking_b[d - 1] if d <= len(ranking_b) else None
        if a is not None:
            overlap += a in seen_b
            seen_a.add(a)
        if b is not None:
            overlap += b in seen_a
            seen_b.add(b)
        weight = p ** (d - 1)
        weighted += weight * (overlap / d)
        normalizer += weight
    return weighted / normalizer
