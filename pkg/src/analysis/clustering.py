"""
Document clustering on binarized SAE embeddings: Jaccard similarity, spectral
clustering, keyphrase-targeted latent filtering, cluster descriptions and the
cluster quality measures (conductance z-score, judged per-cluster accuracy).
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
import scipy.sparse as sp
from joblib import Parallel, delayed
from scipy.linalg import eigh
from scipy.optimize import linear_sum_assignment
from sklearn.cluster import KMeans
from sklearn.neighbors import kneighbors_graph

from analysis.diffing import DiffEntry, diff_pair, top_diff_latents
from catalog.latent_catalog import LatentCatalog
from data_models.record_validator import CorpusRecord
from embeddings.embedding_store import (
    BinaryEmbedding,
    SaeEmbedding,
    binarize,
    binary_matrix,
    build_index,
    filter_latents,
)
from exceptions import CorpusMismatchError, EmptyCorpusError, InvalidParameterError
from gateway.tasks import AnnotationResult, AnnotationTask, TaskKind, make_task
from logger import get_logger
from utils import chunk_bounds

logger = get_logger(task_name=__name__)


@dataclass
class ClusterResult:
    """
    Attributes:
        n_clusters (int): Number of clusters.
        doc_ids (list): Clustered documents in matrix order.
        labels (np.ndarray): Cluster index of each document. Clusters are
            numbered in order of their first member.
        similarity_stats (list): Mean pairwise similarity within each cluster.
        seed (int): k-means seed.
        dropped_doc_ids (list): Documents left out (empty after filtering).
    """

    n_clusters: int
    doc_ids: List[str]
    labels: np.ndarray
    similarity_stats: List[float]
    seed: int
    dropped_doc_ids: List[str] = field(default_factory=list)

    @property
    def assignment(self) -> Dict[str, int]:
        return {doc_id: int(c) for doc_id, c in zip(self.doc_ids, self.labels)}

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.labels == cluster)

    def to_dict(self) -> dict:
        return {
            "n_clusters": self.n_clusters,
            "seed": self.seed,
            "assignment": self.assignment,
            "similarity_stats": self.similarity_stats,
            "dropped_doc_ids": list(self.dropped_doc_ids),
        }


@dataclass
class ClusterDescription:
    cluster: int
    top_latents: List[DiffEntry]
    central_doc_ids: List[str]
    label: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "cluster": self.cluster,
            "top_latents": [entry.to_dict() for entry in self.top_latents],
            "central_doc_ids": list(self.central_doc_ids),
            "label": self.label,
        }


def _jaccard_rows(matrix: sp.csr_matrix, sizes: np.ndarray, start: int, stop: int) -> np.ndarray:
    inter = (matrix[start:stop] @ matrix.T).toarray()
    union = sizes[start:stop, None] + sizes[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        block = np.where(union > 0, inter / union, 0.0)
    return block


def jaccard_matrix(embs: Sequence[BinaryEmbedding], n_jobs: int = 1) -> np.ndarray:
    """
    Pairwise Jaccard similarity |A & B| / |A | B| of the documents' active sets.
    Two empty sets have similarity 0; the diagonal is 1.

    Raises:
        InvalidParameterError: With fewer than two documents.
    """
    if len(embs) < 2:
        raise InvalidParameterError("A similarity matrix needs at least two documents")
    matrix = binary_matrix(embs)
    sizes = np.asarray(matrix.sum(axis=1)).reshape(-1)
    bounds = chunk_bounds(len(embs), max(1, n_jobs))
    if n_jobs == 1 or len(bounds) == 1:
        blocks = [_jaccard_rows(matrix, sizes, a, b) for a, b in bounds]
    else:
        blocks = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(_jaccard_rows)(matrix, sizes, a, b) for a, b in bounds
        )
    similarity = np.vstack(blocks)
    np.fill_diagonal(similarity, 1.0)
    return similarity


def _canonical_labels(labels: np.ndarray) -> np.ndarray:
    """Renumbers clusters in order of their first member."""
    present, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    remap = np.full(int(labels.max()) + 1, -1, dtype=np.int64)
    remap[present[order]] = np.arange(order.size)
    return remap[labels]


def _nearest_clusters(
    similarity: np.ndarray, labels: np.ndarray, rows: np.ndarray, k: int
) -> np.ndarray:
    """
    Non-empty cluster with the highest mean similarity to each of `rows`.
    Ties go to the larger cluster, then to the lower cluster id.
    """
    sizes = np.bincount(labels[labels >= 0], minlength=k)
    present = np.flatnonzero(sizes)
    ranked = present[np.lexsort((present, -sizes[present]))]
    means = np.stack(
        [similarity[np.ix_(rows, np.flatnonzero(labels == c))].mean(axis=1) for c in ranked],
        axis=1,
    )
    return ranked[means.argmax(axis=1)]


def _intra_similarity(similarity: np.ndarray, labels: np.ndarray, k: int) -> List[float]:
    stats = []
    for c in range(k):
        members = np.flatnonzero(labels == c)
        if members.size < 2:
            stats.append(1.0)
            continue
        block = similarity[np.ix_(members, members)]
        off_diagonal = block.sum() - np.trace(block)
        stats.append(float(off_diagonal / (members.size * (members.size - 1))))
    return stats


def _spectral_embedding(similarity: np.ndarray, k: int) -> np.ndarray:
    degree = similarity.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(degree)
    normalized = inv_sqrt[:, None] * similarity * inv_sqrt[None, :]
    n = similarity.shape[0]
    _, vectors = eigh(normalized, subset_by_index=[n - k, n - 1])
    # fix eigenvector signs so the embedding does not depend on the LAPACK build
    pivots = np.abs(vectors).argmax(axis=0)
    vectors = vectors * np.sign(vectors[pivots, np.arange(k)])
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    return np.divide(vectors, norms, out=np.zeros_like(vectors), where=norms > 0)


def spectral_cluster(
    similarity: np.ndarray,
    k: int,
    seed: int = 0,
    doc_ids: Optional[Sequence[str]] = None,
    max_iter: int = 300,
) -> ClusterResult:
    """
    Spectral clustering: top-k eigenvectors of D^-1/2 S D^-1/2 with rows
    renormalized, then k-means (k-means++ init, fixed seed).

    Documents with no similarity to any other document are left out of the
    eigenproblem and afterwards joined to their nearest non-empty cluster
    (see _nearest_clusters).

    Args:
        similarity (np.ndarray): Symmetric n x n matrix with entries in [0, 1].
        k (int): Number of clusters, 2 <= k <= n.
        seed (int): k-means seed.
        doc_ids (Sequence[str]): Row ids; row ordinals as strings by default.
        max_iter (int): k-means iteration cap.

    Returns:
        ClusterResult: Deterministic for fixed (similarity, k, seed).
    """
    similarity = np.asarray(similarity, dtype=np.float64)
    n = similarity.shape[0]
    if similarity.ndim != 2 or similarity.shape[1] != n:
        raise InvalidParameterError("Similarity matrix must be square")
    if not np.allclose(similarity, similarity.T, atol=1e-12):
        raise InvalidParameterError("Similarity matrix must be symmetric")
    if np.any(similarity < 0) or np.any(similarity > 1) or not np.all(np.isfinite(similarity)):
        raise InvalidParameterError("Similarity entries must lie in [0, 1]")
    if k < 2:
        raise InvalidParameterError(f"k must be at least 2. Given {k}")
    if k > n:
        raise InvalidParameterError(f"Cannot form {k} clusters from {n} documents")
    doc_ids = [str(i) for i in range(n)] if doc_ids is None else list(doc_ids)

    if k == n:
        labels = np.arange(n, dtype=np.int64)
    else:
        off_diagonal = similarity.sum(axis=1) - np.diag(similarity)
        connected = np.flatnonzero(off_diagonal > 0)
        if connected.size < k:
            connected = np.arange(n)
        sub = similarity[np.ix_(connected, connected)].copy()
        np.fill_diagonal(sub, 1.0)
        embedding = _spectral_embedding(sub, k)
        kmeans = KMeans(
            n_clusters=k, init="k-means++", n_init=10, max_iter=max_iter, random_state=seed
        )
        sub_labels = kmeans.fit_predict(embedding)
        labels = np.full(n, -1, dtype=np.int64)
        labels[connected] = _canonical_labels(sub_labels)
        isolated = np.flatnonzero(labels < 0)
        if isolated.size:
            targets = _nearest_clusters(similarity, labels, isolated, k)
            logger.warning(
                f"{isolated.size} documents have no similar document; "
                f"joined to clusters {sorted(set(targets.tolist()))}"
            )
            labels[isolated] = targets
        labels = _canonical_labels(labels)
    n_clusters = int(labels.max()) + 1
    return ClusterResult(
        n_clusters=n_clusters,
        doc_ids=doc_ids,
        labels=labels,
        similarity_stats=_intra_similarity(similarity, labels, n_clusters),
        seed=seed,
    )


def cluster_embeddings(
    embs: Sequence[SaeEmbedding],
    k: int,
    seed: int = 0,
    n_jobs: int = 1,
    max_iter: int = 300,
) -> Tuple[ClusterResult, np.ndarray]:
    """
    Binarize, drop empty documents (reported), Jaccard, spectral clustering.

    Returns:
        (result, similarity matrix of the kept documents)
    """
    binary = [binarize(e) for e in embs]
    kept = [b for b in binary if len(b)]
    dropped = [b.doc_id for b in binary if not len(b)]
    if not kept:
        raise EmptyCorpusError("Every document is empty; nothing to cluster")
    if dropped:
        logger.warning(f"Dropped {len(dropped)} documents with no active latents")
    similarity = jaccard_matrix(kept, n_jobs=n_jobs)
    result = spectral_cluster(
        similarity, k, seed=seed, doc_ids=[b.doc_id for b in kept], max_iter=max_iter
    )
    result.dropped_doc_ids = dropped
    return result, similarity


def targeted_cluster(
    embs: Sequence[SaeEmbedding],
    catalog: LatentCatalog,
    keyphrase_vecs: Sequence[Sequence[float]],
    k_latents: int = 100,
    k_clusters: int = 10,
    seed: int = 0,
    n_jobs: int = 1,
    max_iter: int = 300,
) -> Tuple[ClusterResult, np.ndarray, Set[int]]:
    """
    Clusters along the axis named by the keyphrases: each embedding is
    restricted to the union of the keyphrases' top-k_latents label matches
    before clustering.

    Returns:
        (result, similarity matrix, selected latent ids)
    """
    if len(keyphrase_vecs) == 0:
        raise InvalidParameterError("Targeted clustering needs at least one keyphrase vector")
    keep = catalog.union_keyphrase_latents(keyphrase_vecs, k_latents)
    filtered = [filter_latents(e, keep) for e in embs]
    if all(len(e) == 0 for e in filtered):
        raise EmptyCorpusError("No document activates any of the selected latents")
    result, similarity = cluster_embeddings(
        filtered, k_clusters, seed=seed, n_jobs=n_jobs, max_iter=max_iter
    )
    return result, similarity, keep


def describe_cluster(
    cluster: int,
    result: ClusterResult,
    embs: Sequence[BinaryEmbedding],
    similarity: np.ndarray,
    n_top_latents: int = 5,
    n_central: int = 5,
) -> ClusterDescription:
    """
    Top latents of a cluster by diffing its members against the rest
    (min_delta 0), and its members with the highest mean similarity to the
    other members.

    Args:
        cluster (int): Cluster index.
        result (ClusterResult): The clustering.
        embs: Binary embeddings in the clustering's document order.
        similarity (np.ndarray): The clustering's similarity matrix.
    """
    members = result.members(cluster)
    n = len(result.doc_ids)
    if members.size < 1 or members.size == n:
        raise InvalidParameterError(
            f"Cluster {cluster} has {members.size} of {n} documents; cannot diff it"
        )
    is_member = np.zeros(n, dtype=bool)
    is_member[members] = True
    idx_in = build_index([embs[int(o)] for o in members])
    idx_out = build_index([embs[int(o)] for o in np.flatnonzero(~is_member)])
    top = top_diff_latents(diff_pair(idx_in, idx_out, min_delta=0.0), n_top_latents)
    if members.size == 1:
        centrality = np.zeros(1)
    else:
        block = similarity[np.ix_(members, members)]
        centrality = (block.sum(axis=1) - np.diag(block)) / (members.size - 1)
    order = np.lexsort((members, -centrality))[:n_central]
    return ClusterDescription(
        cluster=cluster,
        top_latents=top,
        central_doc_ids=[result.doc_ids[int(members[o])] for o in order],
    )


def mutual_knn_graph(dense_vecs: np.ndarray, knn_k: int = 15) -> sp.csr_matrix:
    """Symmetric graph keeping an edge only if each end is among the other's k nearest (cosine)."""
    n = dense_vecs.shape[0]
    graph = kneighbors_graph(
        dense_vecs, n_neighbors=min(knn_k, n - 1), metric="cosine", mode="distance"
    )
    graph.data = np.clip(1.0 - graph.data, 0.0, None)
    mutual = graph.minimum(graph.T).tocsr()
    mutual.eliminate_zeros()
    return mutual


def conductance(graph: sp.csr_matrix, members: Sequence[int]) -> float:
    """cut(C, rest) / min(vol(C), vol(rest)); 0 when nothing is cut."""
    n = graph.shape[0]
    mask = np.zeros(n, dtype=bool)
    mask[np.asarray(members, dtype=np.int64)] = True
    degree = np.asarray(graph.sum(axis=1)).reshape(-1)
    cut = float(graph[mask][:, ~mask].sum())
    if cut == 0:
        return 0.0
    return cut / min(degree[mask].sum(), degree[~mask].sum())


def conductance_zscore(
    members: Sequence[int],
    dense_vecs: np.ndarray,
    n_random: int = 100,
    knn_k: int = 15,
    seed: int = 0,
    graph: Optional[sp.csr_matrix] = None,
) -> float:
    """
    z-score of a cluster's conductance in the dense-embedding mutual-kNN graph
    against random document sets of the same size. Lower is tighter. A
    constant random baseline gives 0.

    Args:
        members: Document ordinals of the cluster (rows of dense_vecs).
        dense_vecs (np.ndarray): One dense vector per document.
        n_random (int): Random sets drawn.
        knn_k (int): Neighbors per document.
        seed (int): Seed of the random sets.
        graph: Pre-built mutual-kNN graph to reuse across clusters.
    """
    dense_vecs = np.asarray(dense_vecs, dtype=np.float64)
    n = dense_vecs.shape[0]
    members = np.unique(np.asarray(members, dtype=np.int64))
    if not 1 < members.size < n:
        raise InvalidParameterError(
            f"Conductance needs 1 < cluster size < {n}; got {members.size}"
        )
    if n_random < 2:
        raise InvalidParameterError("At least two random sets are needed for a z-score")
    graph = mutual_knn_graph(dense_vecs, knn_k) if graph is None else graph
    observed = conductance(graph, members)
    rng = np.random.default_rng(seed)
    baseline = np.array(
        [
            conductance(graph, rng.choice(n, size=members.size, replace=False))
            for _ in range(n_random)
        ]
    )
    spread = baseline.std()
    if spread == 0:
        return 0.0
    return float((observed - baseline.mean()) / spread)


def align_clusters(confusion: np.ndarray) -> Dict[int, int]:
    """
    Cluster -> reference label matching that maximizes the matched mass
    (Hungarian algorithm). With more clusters than labels some clusters stay
    unmatched.
    """
    confusion = np.asarray(confusion, dtype=np.float64)
    if confusion.ndim != 2 or confusion.size == 0:
        raise InvalidParameterError("Confusion matrix must be a non-empty 2-D matrix")
    if np.any(confusion < 0):
        raise InvalidParameterError("Confusion matrix must be non-negative")
    rows, cols = linear_sum_assignment(confusion, maximize=True)
    return {int(r): int(c) for r, c in zip(rows, cols)}


def confusion_matrix(labels: Sequence[int], reference: Sequence[int]) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    reference = np.asarray(reference, dtype=np.int64)
    matrix = np.zeros((labels.max() + 1, reference.max() + 1), dtype=np.int64)
    np.add.at(matrix, (labels, reference), 1)
    return matrix


def per_cluster_accuracy(original: Dict[str, int], judged: Dict[str, int]) -> Dict[int, float]:
    """
    For each original cluster, the share of its members the judge put back
    into the same cluster.

    Raises:
        CorpusMismatchError: If the two assignments cover different documents.
    """
    if set(original) != set(judged):
        raise CorpusMismatchError("Original and judged assignments cover different documents")
    totals: Dict[int, int] = {}
    kept: Dict[int, int] = {}
    for doc_id, cluster in original.items():
        totals[cluster] = totals.get(cluster, 0) + 1
        kept[cluster] = kept.get(cluster, 0) + (judged[doc_id] == cluster)
    return {c: kept[c] / totals[c] for c in sorted(totals)}


def make_cluster_label_task(
    description: ClusterDescription,
    catalog: Optional[LatentCatalog],
    corpus: Dict[str, CorpusRecord],
) -> AnnotationTask:
    """Summarize task titling a cluster from its top latents and central texts."""
    features = []
    for entry in description.top_latents:
        label = catalog.label(entry.latent_id) if catalog is not None else None
        features.append(
            {"latent_id": entry.latent_id, "label": label or "", "delta": round(entry.delta, 6)}
        )
    examples = [
        corpus[doc_id].text if doc_id in corpus else f"[document {doc_id}]"
        for doc_id in description.central_doc_ids
    ]
    return make_task(
        TaskKind.SUMMARIZE,
        {"features": features, "examples": examples},
        template_id="summarize_cluster_v1",
    )


def make_assign_cluster_task(cluster_labels: Sequence[str], text: str) -> AnnotationTask:
    """Asks a judge to place one text into one of the described clusters."""
    return make_task(
        TaskKind.ASSIGN_CLUSTER,
        {
            "clusters": [{"cluster": c, "label": label} for c, label in enumerate(cluster_labels)],
            "n_clusters": len(cluster_labels),
            "text": text,
        },
    )


def judged_assignment(doc_ids: Sequence[str], results: Sequence) -> Dict[str, int]:
    """Cluster per document from assign results; failed slots become -1."""
    return {
        doc_id: int(r.content["cluster"]) if isinstance(r, AnnotationResult) else -1
        for doc_id, r in zip(doc_ids, results)
    }
