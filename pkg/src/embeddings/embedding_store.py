"""
Per-document SAE embeddings: max-pooling token activations, binarization and
the inverted index that backs frequency and co-occurrence statistics.

"Active" means a stored value > 0 everywhere in this package; zeros are never
stored, so the active set of an embedding is exactly its stored latent ids.
"""
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
import scipy.sparse as sp
from joblib import Parallel, delayed

from encoding.sae_encoder import TokenActivationRecord
from exceptions import EmptyCorpusError, InputError, InvalidParameterError
from logger import get_logger

logger = get_logger(task_name=__name__)


@dataclass(frozen=True)
class DocActivations:
    """Token-level sparse activations of one document."""

    doc_id: str
    tokens: Tuple[TokenActivationRecord, ...]

    def __post_init__(self):
        tokens = tuple(self.tokens)
        indices = [t.token_index for t in tokens]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise InvalidParameterError(
                f"Token indices of document '{self.doc_id}' are not strictly increasing"
            )
        object.__setattr__(self, "tokens", tokens)

    def token_positions(self, latent_id: int) -> np.ndarray:
        """Token indices on which a latent is active."""
        return np.array(
            [
                t.token_index
                for t in self.tokens
                if len(t) and _contains(t.latent_ids, latent_id)
            ],
            dtype=np.int64,
        )


def _contains(sorted_ids: np.ndarray, latent_id: int) -> bool:
    pos = np.searchsorted(sorted_ids, latent_id)
    return bool(pos < sorted_ids.size and sorted_ids[pos] == latent_id)


@dataclass(frozen=True, eq=False)
class SaeEmbedding:
    """Max-pooled sparse vector of one document; ids strictly increasing, values > 0."""

    doc_id: str
    latent_ids: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.latent_ids, dtype=np.int64).reshape(-1)
        vals = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if ids.shape != vals.shape:
            raise InvalidParameterError("latent_ids and values differ in length")
        if ids.size and (np.any(np.diff(ids) <= 0) or np.any(vals <= 0)):
            raise InvalidParameterError(
                f"Embedding of '{self.doc_id}' must have strictly increasing ids "
                "and positive values"
            )
        object.__setattr__(self, "latent_ids", ids)
        object.__setattr__(self, "values", vals)

    @property
    def entries(self) -> List[Tuple[int, float]]:
        return [(int(i), float(v)) for i, v in zip(self.latent_ids, self.values)]

    def value_of(self, latent_id: int) -> float:
        pos = np.searchsorted(self.latent_ids, latent_id)
        if pos < self.latent_ids.size and self.latent_ids[pos] == latent_id:
            return float(self.values[pos])
        return 0.0

    def __len__(self) -> int:
        return int(self.latent_ids.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SaeEmbedding):
            return NotImplemented
        return (
            self.doc_id == other.doc_id
            and np.array_equal(self.latent_ids, other.latent_ids)
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True, eq=False)
class BinaryEmbedding:
    """Sorted set of the active latents of one document."""

    doc_id: str
    active: np.ndarray

    def __post_init__(self):
        active = np.unique(np.asarray(self.active, dtype=np.int64).reshape(-1))
        object.__setattr__(self, "active", active)

    def as_set(self) -> Set[int]:
        return set(int(i) for i in self.active)

    def __len__(self) -> int:
        return int(self.active.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryEmbedding):
            return NotImplemented
        return self.doc_id == other.doc_id and np.array_equal(self.active, other.active)


@dataclass(frozen=True, eq=False)
class InvertedIndex:
    """
    Latent id -> sorted document ordinals. Immutable once built.

    Attributes:
        n_docs (int): Number of indexed documents.
        doc_ids (tuple): Document id of each ordinal.
        postings (dict): latent_id -> strictly increasing array of ordinals.
    """

    n_docs: int
    doc_ids: Tuple[str, ...]
    postings: Dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def latent_ids(self) -> np.ndarray:
        return np.array(sorted(self.postings), dtype=np.int64)

    def posting(self, latent_id: int) -> np.ndarray:
        return self.postings.get(int(latent_id), np.empty(0, dtype=np.int64))

    def document_frequency(self, latent_id: int) -> int:
        return int(self.posting(latent_id).size)

    def frequencies(self) -> Dict[int, float]:
        """Frequency of every latent present in the index."""
        if self.n_docs == 0:
            raise EmptyCorpusError("Cannot compute frequencies of an empty corpus")
        return {i: p.size / self.n_docs for i, p in self.postings.items()}

    def ordinal_of(self) -> Dict[str, int]:
        return {doc_id: n for n, doc_id in enumerate(self.doc_ids)}

    def to_embeddings(self) -> List[BinaryEmbedding]:
        """Inverts the postings back into one binary embedding per document."""
        per_doc: List[List[int]] = [[] for _ in range(self.n_docs)]
        for latent_id in sorted(self.postings):
            for ordinal in self.postings[latent_id]:
                per_doc[int(ordinal)].append(latent_id)
        return [
            BinaryEmbedding(doc_id, np.array(ids, dtype=np.int64))
            for doc_id, ids in zip(self.doc_ids, per_doc)
        ]

    def to_csc(self, latent_ids: Sequence[int]) -> sp.csc_matrix:
        """Binary n_docs x len(latent_ids) matrix; column c is latent latent_ids[c]."""
        postings = [self.posting(i) for i in latent_ids]
        indptr = np.zeros(len(postings) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([p.size for p in postings])
        indices = (
            np.concatenate(postings).astype(np.int32)
            if postings
            else np.empty(0, dtype=np.int32)
        )
        data = np.ones(indices.size, dtype=np.int32)
        return sp.csc_matrix(
            (data, indices, indptr), shape=(self.n_docs, len(postings))
        )

    def subset(self, ordinals: Sequence[int]) -> "InvertedIndex":
        """Index over the given documents only, renumbered in the given order."""
        embeddings = self.to_embeddings()
        return build_index([embeddings[int(n)] for n in ordinals])

    def merge(self, other: "InvertedIndex") -> "InvertedIndex":
        """Concatenates two indexes; ordinals of `other` are shifted by self.n_docs."""
        overlap = set(self.doc_ids) & set(other.doc_ids)
        if overlap:
            raise InputError(f"Duplicate doc ids across shards: {sorted(overlap)[:5]}")
        postings = {i: p for i, p in self.postings.items()}
        for latent_id, posting in other.postings.items():
            shifted = posting + self.n_docs
            if latent_id in postings:
                postings[latent_id] = np.concatenate([postings[latent_id], shifted])
            else:
                postings[latent_id] = shifted
        return InvertedIndex(
            self.n_docs + other.n_docs, self.doc_ids + other.doc_ids, postings
        )


def pool_document(d: DocActivations) -> SaeEmbedding:
    """
    Max-pools a document's token activations into one sparse embedding.

    Raises:
        EmptyCorpusError: If the document has no tokens.
    """
    if not d.tokens:
        raise EmptyCorpusError(f"Document '{d.doc_id}' has no tokens")
    ids = np.concatenate([t.latent_ids for t in d.tokens])
    vals = np.concatenate([t.values for t in d.tokens])
    if ids.size == 0:
        return SaeEmbedding(d.doc_id, ids, vals)
    order = np.argsort(ids, kind="stable")
    ids, vals = ids[order], vals[order]
    unique_ids, starts = np.unique(ids, return_index=True)
    return SaeEmbedding(d.doc_id, unique_ids, np.maximum.reduceat(vals, starts))


def pool_corpus(docs: Iterable[DocActivations], n_jobs: int = 1) -> List[SaeEmbedding]:
    """Pools every document, in parallel threads when n_jobs > 1. Order is preserved."""
    docs = list(docs)
    if n_jobs == 1 or len(docs) < 2:
        return [pool_document(d) for d in docs]
    return Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(pool_document)(d) for d in docs
    )


def binarize(e: SaeEmbedding) -> BinaryEmbedding:
    """Active latents of an embedding: every stored id, since stored values are > 0."""
    return BinaryEmbedding(e.doc_id, e.latent_ids.copy())


def build_index(embs: Sequence[BinaryEmbedding]) -> InvertedIndex:
    """
    Builds the inverted index of a corpus of binary embeddings.

    Raises:
        InputError: On duplicate doc ids.
    """
    doc_ids = tuple(e.doc_id for e in embs)
    if len(set(doc_ids)) != len(doc_ids):
        seen, dupes = set(), []
        for doc_id in doc_ids:
            if doc_id in seen:
                dupes.append(doc_id)
            seen.add(doc_id)
        raise InputError(f"Duplicate doc ids: {dupes[:5]}")
    if not embs:
        return InvertedIndex(0, (), {})

    all_ids = np.concatenate([e.active for e in embs])
    ordinals = np.repeat(
        np.arange(len(embs), dtype=np.int64), [len(e) for e in embs]
    )
    order = np.argsort(all_ids, kind="stable")
    all_ids, ordinals = all_ids[order], ordinals[order]
    unique_ids, starts = np.unique(all_ids, return_index=True)
    postings = {
        int(i): posting
        for i, posting in zip(unique_ids, np.split(ordinals, starts[1:]))
    }
    return InvertedIndex(len(embs), doc_ids, postings)


def latent_frequency(idx: InvertedIndex, i: int) -> float:
    """
    Share of documents in which latent i is active; 0 for a latent never seen.

    Raises:
        EmptyCorpusError: If the index has no documents.
    """
    if idx.n_docs == 0:
        raise EmptyCorpusError("Cannot compute a frequency over an empty corpus")
    return idx.document_frequency(i) / idx.n_docs


def filter_latents(e: SaeEmbedding, keep: Iterable[int]) -> SaeEmbedding:
    """Restricts an embedding to the latents in `keep`, preserving order."""
    keep = np.fromiter((int(i) for i in keep), dtype=np.int64)
    mask = np.isin(e.latent_ids, keep)
    return SaeEmbedding(e.doc_id, e.latent_ids[mask], e.values[mask])


def binary_matrix(
    embs: Sequence[BinaryEmbedding], n_cols: Optional[int] = None
) -> sp.csr_matrix:
    """Sparse binary doc x latent matrix whose column index is the latent id."""
    lengths = [len(e) for e in embs]
    indptr = np.zeros(len(embs) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum(lengths)
    indices = (
        np.concatenate([e.active for e in embs])
        if embs
        else np.empty(0, dtype=np.int64)
    )
    if n_cols is None:
        n_cols = int(indices.max()) + 1 if indices.size else 1
    data = np.ones(indices.size, dtype=np.float64)
    return sp.csr_matrix((data, indices, indptr), shape=(len(embs), n_cols))
