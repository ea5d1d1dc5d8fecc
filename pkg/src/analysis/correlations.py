"""
Latent co-occurrence mining: exact pair counts over the inverted index, NPMI
and conditional occurrence, and the filters that leave "interesting" pairs
(high NPMI, dissimilar labels, not confined to the same or adjacent tokens).
"""
import math
from collections.abc import Mapping
from dataclasses import asdict, dataclass
from typing import Iterator, List, Optional, Sequence, Set, Tuple

import numpy as np
import scipy.sparse as sp
from joblib import Parallel, delayed
from tqdm import tqdm

from catalog.latent_catalog import LatentCatalog
from embeddings.embedding_store import DocActivations, InvertedIndex
from exceptions import CorpusMismatchError, EmptyCorpusError, InputError, InvalidParameterError
from gateway.tasks import AnnotationResult, AnnotationTask, TaskKind, make_task
from logger import get_logger

logger = get_logger(task_name=__name__)

# vectorized NPMI pre-filters with this slack; survivors are re-checked exactly
_PREFILTER_SLACK = 1e-9

Shard = Tuple[np.ndarray, np.ndarray, np.ndarray]


@dataclass(frozen=True)
class PairStats:
    """
    Statistics of one latent pair. Within one corpus i < j; for cross-corpus
    pairs i is the latent on the left side and j the one on the right.
    """

    i: int
    j: int
    n_i: int
    n_j: int
    n_ij: int
    npmi: float
    co: float
    label_sim: Optional[float] = None
    trivial_fraction: Optional[float] = None
    trivial_sample: int = 0
    labels: Optional[Tuple[Optional[str], Optional[str]]] = None
    example_doc_ids: Tuple[str, ...] = ()

    def to_dict(self) -> dict:
        stats = asdict(self)
        stats["example_doc_ids"] = list(self.example_doc_ids)
        stats["labels"] = None if self.labels is None else list(self.labels)
        return stats


class PairCounts(Mapping):
    """Read-only (i, j) -> n_ij mapping backed by sorted numpy arrays."""

    def __init__(self, i: np.ndarray, j: np.ndarray, n_ij: np.ndarray):
        order = np.lexsort((j, i))
        self.i = np.asarray(i, dtype=np.int64)[order]
        self.j = np.asarray(j, dtype=np.int64)[order]
        self.n_ij = np.asarray(n_ij, dtype=np.int64)[order]
        self._keys = (self.i << 32) | self.j

    def __getitem__(self, key: Tuple[int, int]) -> int:
        i, j = key
        packed = (int(i) << 32) | int(j)
        pos = int(np.searchsorted(self._keys, packed))
        if pos < self._keys.size and self._keys[pos] == packed:
            return int(self.n_ij[pos])
        raise KeyError(key)

    def __iter__(self) -> Iterator[Tuple[int, int]]:
        return ((int(i), int(j)) for i, j in zip(self.i, self.j))

    def __len__(self) -> int:
        return int(self.n_ij.size)


def qualifying_latents(idx: InvertedIndex, min_freq: float) -> np.ndarray:
    """Sorted ids of the latents active in at least min_freq of the documents."""
    if not 0 <= min_freq < 1:
        raise InvalidParameterError(f"min_freq must be in [0, 1). Given {min_freq}")
    if idx.n_docs == 0:
        raise EmptyCorpusError("Cannot count co-occurrences in an empty corpus")
    ids = idx.latent_ids
    return ids[document_frequencies(idx, ids) / idx.n_docs >= min_freq]


def document_frequencies(idx: InvertedIndex, latent_ids: np.ndarray) -> np.ndarray:
    return np.array([idx.document_frequency(i) for i in latent_ids], dtype=np.int64)


def _shard_pairs(xt: sp.csr_matrix, xr: sp.csr_matrix, ids: np.ndarray, rows: np.ndarray) -> Shard:
    """Joint counts of (ids[rows] x all ids), upper triangle only."""
    block = (xt[rows] @ xr).tocoo()
    r = rows[block.row]
    c = block.col
    upper = c > r
    return ids[r[upper]], ids[c[upper]], block.data[upper].astype(np.int64)


def iter_cooccurrence_shards(
    idx: InvertedIndex,
    min_freq: float,
    n_shards: int = 16,
    n_jobs: int = 1,
    progress: bool = False,
) -> Iterator[Shard]:
    """
    Exact joint document counts of all qualifying latent pairs with n_ij >= 1,
    yielded shard by shard as (i, j, n_ij) arrays with i < j. A pair belongs to
    the shard of i modulo n_shards; at most n_jobs shards are held in memory.
    """
    if n_shards < 1:
        raise InvalidParameterError(f"n_shards must be at least 1. Given {n_shards}")
    ids = qualifying_latents(idx, min_freq)
    if ids.size < 2:
        return
    x = idx.to_csc(ids)
    xr = x.tocsr()
    xt = x.T.tocsr()
    shard_rows = [np.flatnonzero(ids % n_shards == s) for s in range(n_shards)]
    shard_rows = [rows for rows in shard_rows if rows.size]
    batch = max(1, n_jobs)
    with tqdm(total=len(shard_rows), disable=None if progress else True, desc="co-occurrence") as bar:
        for start in range(0, len(shard_rows), batch):
            rows_batch = shard_rows[start : start + batch]
            if n_jobs == 1:
                shards = [_shard_pairs(xt, xr, ids, rows) for rows in rows_batch]
            else:
                shards = Parallel(n_jobs=n_jobs, prefer="threads")(
                    delayed(_shard_pairs)(xt, xr, ids, rows) for rows in rows_batch
                )
            for shard in shards:
                bar.update(1)
                yield shard


def cooccurrence_counts(
    idx: InvertedIndex,
    min_freq: float,
    n_shards: int = 16,
    n_jobs: int = 1,
    progress: bool = False,
) -> PairCounts:
    """
    Joint document counts of every pair of latents with frequency >= min_freq
    that co-occur at least once.

    Args:
        idx (InvertedIndex): The corpus.
        min_freq (float): Frequency floor for latents entering enumeration.
        n_shards (int): Number of accumulation shards.
        n_jobs (int): Shards counted concurrently.

    Returns:
        PairCounts: (i, j) -> n_ij with i < j.
    """
    parts = list(iter_cooccurrence_shards(idx, min_freq, n_shards, n_jobs, progress))
    if not parts:
        empty = np.empty(0, dtype=np.int64)
        return PairCounts(empty, empty, empty)
    return PairCounts(*(np.concatenate(col) for col in zip(*parts)))


def _check_counts(n_i: int, n_j: int, n_ij: int, n_docs: int) -> None:
    if n_docs < 1 or n_i < 1 or n_j < 1:
        raise InvalidParameterError(
            f"NPMI needs n_i, n_j, n_docs >= 1 (got {n_i}, {n_j}, {n_docs})"
        )
    if n_i > n_docs or n_j > n_docs or not 0 <= n_ij <= min(n_i, n_j):
        raise InvalidParameterError(
            f"Inconsistent counts n_i={n_i} n_j={n_j} n_ij={n_ij} n_docs={n_docs}"
        )


def npmi(n_i: int, n_j: int, n_ij: int, n_docs: int, log_base: Optional[float] = None) -> float:
    """
    Normalized pointwise mutual information from document counts:

        ln(P(i,j) / (P(i) P(j))) / -ln P(i,j)

    n_ij = 0 gives -1 and perfect co-occurrence gives +1. The value does not
    depend on the logarithm base; log_base only exists to show that.
    """
    _check_counts(n_i, n_j, n_ij, n_docs)
    if n_ij == 0:
        return -1.0
    if n_ij == n_docs or n_i == n_j == n_ij:
        return 1.0
    if log_base is None:
        log = math.log
    else:
        def log(x):
            return math.log(x, log_base)
    pmi = log(n_ij * n_docs / (n_i * n_j))
    return min(1.0, max(-1.0, pmi / -log(n_ij / n_docs)))


def npmi_array(
    n_i: np.ndarray, n_j: np.ndarray, n_ij: np.ndarray, n_docs: int
) -> np.ndarray:
    """Vectorized NPMI for n_ij >= 1, used to pre-filter shards."""
    n_i = n_i.astype(np.float64)
    n_j = n_j.astype(np.float64)
    n_ij = n_ij.astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        pmi = np.log(n_ij * n_docs / (n_i * n_j))
        values = pmi / -np.log(n_ij / n_docs)
    values[(n_ij == n_docs) | ((n_i == n_ij) & (n_j == n_ij))] = 1.0
    return np.clip(values, -1.0, 1.0)


def conditional_occurrence(n_i: int, n_j: int, n_ij: int) -> float:
    """max(P(i|j), P(j|i)) = max(n_ij / n_j, n_ij / n_i)."""
    if n_i < 1 or n_j < 1:
        raise InvalidParameterError("Conditional occurrence needs non-zero marginals")
    return max(n_ij / n_j, n_ij / n_i)


def _covered(a: np.ndarray, b: np.ndarray) -> bool:
    """Every position in a has a position of b at distance <= 1."""
    pos = np.searchsorted(b, a)
    left = b[np.clip(pos - 1, 0, b.size - 1)]
    right = b[np.clip(pos, 0, b.size - 1)]
    return bool(np.all(np.minimum(np.abs(a - left), np.abs(a - right)) <= 1))


def is_trivial_cooccurrence(doc: DocActivations, i: int, j: int) -> bool:
    """True when i and j only co-activate on the same or adjacent tokens of the document."""
    pos_i = doc.token_positions(i)
    pos_j = doc.token_positions(j)
    if pos_i.size == 0 or pos_j.size == 0:
        raise InvalidParameterError(
            f"Latents {i} and {j} do not co-occur in document '{doc.doc_id}'"
        )
    return _covered(pos_i, pos_j) and _covered(pos_j, pos_i)


def trivial_fraction(pair: Tuple[int, int], activations: Sequence[DocActivations]) -> float:
    """
    Share of the given co-occurring documents in which the pair co-activates
    only on the same or adjacent tokens.

    Raises:
        InvalidParameterError: If a document does not contain both latents.
    """
    if len(activations) == 0:
        raise InvalidParameterError("Trivial fraction needs at least one document")
    i, j = pair
    trivial = sum(is_trivial_cooccurrence(doc, i, j) for doc in activations)
    return trivial / len(activations)


def _co_occurring(idx: InvertedIndex, i: int, j: int) -> np.ndarray:
    return np.intersect1d(idx.posting(i), idx.posting(j), assume_unique=True)


def _labels(catalog: Optional[LatentCatalog], i: int, j: int):
    if catalog is None:
        return None
    return catalog.label(i), catalog.label(j)


def find_correlated_pairs(
    idx: InvertedIndex,
    catalog: Optional[LatentCatalog],
    npmi_min: float = 0.6,
    sim_max: float = 0.2,
    min_freq: float = 0.002,
    trivial_max: float = 0.5,
    docs: Optional[Sequence[DocActivations]] = None,
    trivial_sample: int = 50,
    lenient: bool = False,
    exclude: Optional[Set[int]] = None,
    n_shards: int = 16,
    n_jobs: int = 1,
    seed: int = 0,
    n_examples: int = 3,
    progress: bool = False,
) -> List[PairStats]:
    """
    Pairs with high NPMI whose labels are dissimilar and whose co-activation is
    not confined to the same or adjacent tokens.

    Args:
        idx (InvertedIndex): The corpus.
        catalog (LatentCatalog): Label vectors for the similarity filter.
        npmi_min (float): Minimum NPMI.
        sim_max (float): Maximum label cosine similarity.
        min_freq (float): Frequency floor of both latents.
        trivial_max (float): Maximum trivial fraction.
        docs: Token activations aligned with the index ordinals. Without them
            the trivial filter is skipped.
        trivial_sample (int): Co-occurring documents examined per pair.
        lenient (bool): Let pairs without label vectors pass the similarity filter.
        exclude (set): Latents never reported (e.g. syntactic ones).
        n_shards (int): Accumulation shards.
        n_jobs (int): Shards counted concurrently.
        seed (int): Seed of the trivial-filter document sample.
        n_examples (int): Co-occurring example doc ids per pair.

    Returns:
        List[PairStats]: Sorted by NPMI descending, ties by (i, j).
    """
    if not -1 <= npmi_min <= 1:
        raise InvalidParameterError(f"npmi_min must be in [-1, 1]. Given {npmi_min}")
    if not 0 <= trivial_max <= 1:
        raise InvalidParameterError(f"trivial_max must be in [0, 1]. Given {trivial_max}")
    if idx.n_docs == 0:
        raise EmptyCorpusError("Cannot mine correlations in an empty corpus")
    if not lenient and (catalog is None or not catalog.has_vectors):
        raise InputError("The catalog has no label vectors; use lenient mode to skip the filter")
    if docs is not None and len(docs) != idx.n_docs:
        raise CorpusMismatchError(
            f"{len(docs)} activation documents for an index of {idx.n_docs}"
        )
    if docs is None:
        logger.warning("No token activations given; the trivial-pair filter is skipped")
    exclude = exclude or set()
    excluded = np.fromiter(exclude, dtype=np.int64) if exclude else np.empty(0, np.int64)

    ids = qualifying_latents(idx, min_freq)
    df = document_frequencies(idx, ids)
    pairs: List[PairStats] = []
    for shard_i, shard_j, shard_n in iter_cooccurrence_shards(
        idx, min_freq, n_shards, n_jobs, progress
    ):
        n_i = df[np.searchsorted(ids, shard_i)]
        n_j = df[np.searchsorted(ids, shard_j)]
        keep = npmi_array(n_i, n_j, shard_n, idx.n_docs) >= npmi_min - _PREFILTER_SLACK
        if excluded.size:
            keep &= ~np.isin(shard_i, excluded) & ~np.isin(shard_j, excluded)
        for n in np.flatnonzero(keep):
            stats = _pair_stats(
                idx, catalog, int(shard_i[n]), int(shard_j[n]), int(n_i[n]),
                int(n_j[n]), int(shard_n[n]), npmi_min, sim_max, trivial_max,
                docs, trivial_sample, lenient, seed, n_examples,
            )
            if stats is not None:
                pairs.append(stats)
    return sorted(pairs, key=lambda p: (-p.npmi, p.i, p.j))


def _pair_stats(
    idx, catalog, i, j, n_i, n_j, n_ij, npmi_min, sim_max, trivial_max,
    docs, trivial_sample, lenient, seed, n_examples,
) -> Optional[PairStats]:
    value = npmi(n_i, n_j, n_ij, idx.n_docs)
    if value < npmi_min:
        return None
    label_sim = None
    if catalog is not None and catalog.has_vector(i) and catalog.has_vector(j):
        label_sim = catalog.label_similarity(i, j)
        if label_sim > sim_max:
            return None
    elif not lenient:
        return None
    co_docs = _co_occurring(idx, i, j)
    fraction, sample_size = None, 0
    if docs is not None:
        sample = co_docs
        if sample.size > trivial_sample:
            rng = np.random.default_rng([seed, i, j])
            sample = np.sort(rng.choice(co_docs, size=trivial_sample, replace=False))
        fraction = trivial_fraction((i, j), [docs[int(o)] for o in sample])
        sample_size = int(sample.size)
        if fraction > trivial_max:
            return None
    return PairStats(
        i=i, j=j, n_i=n_i, n_j=n_j, n_ij=n_ij,
        npmi=value,
        co=conditional_occurrence(n_i, n_j, n_ij),
        label_sim=label_sim,
        trivial_fraction=fraction,
        trivial_sample=sample_size,
        labels=_labels(catalog, i, j),
        example_doc_ids=tuple(idx.doc_ids[int(o)] for o in co_docs[:n_examples]),
    )


def find_cross_correlated_pairs(
    idx_left: InvertedIndex,
    idx_right: InvertedIndex,
    npmi_min: float = 0.6,
    min_freq: float = 0.002,
    catalog: Optional[LatentCatalog] = None,
    sim_max: Optional[float] = None,
    n_examples: int = 3,
) -> List[PairStats]:
    """
    Correlations across aligned document pairs (e.g. prompt and response):
    n_ij counts the pairs whose left document activates i and whose right
    document activates j.

    Raises:
        CorpusMismatchError: If the two sides differ in length.
    """
    if idx_left.n_docs != idx_right.n_docs:
        raise CorpusMismatchError(
            f"Aligned corpora differ in length ({idx_left.n_docs} vs {idx_right.n_docs})"
        )
    left_ids = qualifying_latents(idx_left, min_freq)
    right_ids = qualifying_latents(idx_right, min_freq)
    if left_ids.size == 0 or right_ids.size == 0:
        return []
    joint = (idx_left.to_csc(left_ids).T.tocsr() @ idx_right.to_csc(right_ids).tocsr()).tocoo()
    n_docs = idx_left.n_docs
    pairs = []
    for r, c, n_ij in zip(joint.row, joint.col, joint.data):
        i, j = int(left_ids[r]), int(right_ids[c])
        n_i, n_j = idx_left.document_frequency(i), idx_right.document_frequency(j)
        value = npmi(n_i, n_j, int(n_ij), n_docs)
        if value < npmi_min:
            continue
        label_sim = None
        if catalog is not None and catalog.has_vector(i) and catalog.has_vector(j):
            label_sim = catalog.label_similarity(i, j)
            if sim_max is not None and label_sim > sim_max:
                continue
        co_docs = np.intersect1d(idx_left.posting(i), idx_right.posting(j), assume_unique=True)
        pairs.append(
            PairStats(
                i=i, j=j, n_i=n_i, n_j=n_j, n_ij=int(n_ij),
                npmi=value,
                co=conditional_occurrence(n_i, n_j, int(n_ij)),
                label_sim=label_sim,
                labels=_labels(catalog, i, j),
                example_doc_ids=tuple(idx_left.doc_ids[int(o)] for o in co_docs[:n_examples]),
            )
        )
    return sorted(pairs, key=lambda p: (-p.npmi, p.i, p.j))


def verified_npmi(judgments_i: Sequence[bool], judgments_j: Sequence[bool]) -> float:
    """NPMI of two latents' judged presence over the same documents."""
    a = np.asarray(judgments_i, dtype=bool)
    b = np.asarray(judgments_j, dtype=bool)
    if a.shape != b.shape or a.size == 0:
        raise InvalidParameterError("Judgment vectors must be non-empty and of equal length")
    if not a.any() or not b.any():
        raise InvalidParameterError("Each latent needs at least one YES judgment")
    return npmi(int(a.sum()), int(b.sum()), int((a & b).sum()), int(a.size))


def sample_random_pairs(
    idx: InvertedIndex, n: int, min_freq: float = 0.002, seed: int = 0
) -> List[PairStats]:
    """Baseline of n distinct random pairs among the qualifying latents."""
    ids = qualifying_latents(idx, min_freq)
    n_possible = ids.size * (ids.size - 1) // 2
    rng = np.random.default_rng(seed)
    if n_possible <= n:
        chosen = [(a, b) for a in range(ids.size) for b in range(a + 1, ids.size)]
    else:
        seen: Set[Tuple[int, int]] = set()
        chosen = []
        while len(chosen) < n:
            a, b = sorted(int(v) for v in rng.choice(ids.size, size=2, replace=False))
            if (a, b) not in seen:
                seen.add((a, b))
                chosen.append((a, b))
    pairs = []
    for a, b in chosen:
        i, j = int(ids[a]), int(ids[b])
        n_i, n_j = idx.document_frequency(i), idx.document_frequency(j)
        n_ij = int(_co_occurring(idx, i, j).size)
        pairs.append(
            PairStats(
                i=i, j=j, n_i=n_i, n_j=n_j, n_ij=n_ij,
                npmi=npmi(n_i, n_j, n_ij, idx.n_docs),
                co=conditional_occurrence(n_i, n_j, n_ij),
            )
        )
    return pairs


def make_syntactic_tasks(
    catalog: LatentCatalog, latent_ids: Sequence[int]
) -> Tuple[List[int], List[AnnotationTask]]:
    """Classify tasks for the labeled latents among latent_ids."""
    labeled = [int(i) for i in latent_ids if catalog.label(i) is not None]
    tasks = [make_task(TaskKind.CLASSIFY_SYNTACTIC, {"label": catalog.label(i)}) for i in labeled]
    return labeled, tasks


def syntactic_exclusion_set(latent_ids: Sequence[int], results: Sequence) -> Set[int]:
    """Latents classified as syntactic; failed slots are kept in the analysis."""
    return {
        int(i)
        for i, result in zip(latent_ids, results)
        if isinstance(result, AnnotationResult) and result.content.get("class") == "syntactic"
    }
