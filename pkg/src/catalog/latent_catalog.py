"""
Latent labels and label vectors, with exhaustive cosine search over labels.

Entries without a label vector still carry a label but never take part in
similarity queries.
"""
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from data_models.record_validator import CorpusRecord, validate_records
from embeddings.embedding_store import DocActivations
from exceptions import InputError, InvalidParameterError
from gateway.tasks import AnnotationResult, AnnotationTask, TaskKind, make_task
from logger import get_logger
from utils import write_jsonl

logger = get_logger(task_name=__name__)

UNIT_NORM_TOLERANCE = 1e-6


class Provenance(str, Enum):
    ORIGINAL = "original"
    RELABELED = "relabeled"


class LatentCatalogEntry(BaseModel):
    """{"latent_id": int, "label": str, "label_vec": [float...]?, "provenance": ...}"""

    model_config = ConfigDict(frozen=True)

    latent_id: int
    label: str
    label_vec: Optional[List[float]] = None
    provenance: Provenance = Provenance.ORIGINAL

    @field_validator("latent_id")
    @classmethod
    def non_negative_id(cls, v):
        if v < 0:
            raise ValueError(f"latent_id must be non-negative. Given {v}")
        return v

    @field_validator("label_vec")
    @classmethod
    def unit_norm(cls, vec):
        if vec is None:
            return vec
        norm = float(np.linalg.norm(np.asarray(vec, dtype=np.float64)))
        if not np.isfinite(norm) or abs(norm - 1.0) > UNIT_NORM_TOLERANCE:
            raise ValueError(f"label_vec must have unit L2 norm, got {norm}")
        return vec


class LatentCatalog:
    """
    Immutable latent id -> entry mapping.

    Args:
        entries (Iterable[LatentCatalogEntry]): Catalog entries; ids must be unique.
    """

    def __init__(self, entries: Iterable[LatentCatalogEntry]):
        self.entries: Dict[int, LatentCatalogEntry] = {}
        for entry in entries:
            if entry.latent_id in self.entries:
                raise InputError(f"Duplicate latent id {entry.latent_id} in catalog")
            self.entries[entry.latent_id] = entry
        with_vecs = sorted(i for i, e in self.entries.items() if e.label_vec is not None)
        self.vector_ids = np.array(with_vecs, dtype=np.int64)
        if with_vecs:
            dims = {len(self.entries[i].label_vec) for i in with_vecs}
            if len(dims) != 1:
                raise InputError(f"Label vectors have mixed dimensions {sorted(dims)}")
            self.vectors = np.array(
                [self.entries[i].label_vec for i in with_vecs], dtype=np.float64
            )
        else:
            self.vectors = np.empty((0, 0), dtype=np.float64)
        self._row = {int(i): n for n, i in enumerate(self.vector_ids)}

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, latent_id: int) -> bool:
        return int(latent_id) in self.entries

    def __eq__(self, other) -> bool:
        if not isinstance(other, LatentCatalog):
            return NotImplemented
        return self.entries == other.entries

    @property
    def has_vectors(self) -> bool:
        return self.vector_ids.size > 0

    def label(self, latent_id: int) -> Optional[str]:
        entry = self.entries.get(int(latent_id))
        return entry.label if entry else None

    def has_vector(self, latent_id: int) -> bool:
        return int(latent_id) in self._row

    def vector(self, latent_id: int) -> np.ndarray:
        if not self.has_vector(latent_id):
            raise InputError(f"Latent {latent_id} has no label vector")
        return self.vectors[self._row[int(latent_id)]]

    def label_similarity(self, i: int, j: int) -> float:
        """
        Cosine similarity of two label vectors.

        Raises:
            InputError: If either latent has no label vector.
        """
        return float(np.dot(self.vector(i), self.vector(j)))

    def top_k_latents(self, query_vec: Sequence[float], k: int) -> List[Tuple[int, float]]:
        """
        The k latents whose label vectors are most similar to the query.

        Args:
            query_vec: Query vector; renormalized to unit length.
            k (int): Number of latents; k at or above the catalog size ranks everything.

        Returns:
            List of (latent_id, cosine similarity), descending, ties by lower id.
        """
        if k < 1:
            raise InvalidParameterError(f"k must be at least 1. Given {k}")
        if not self.has_vectors:
            raise InputError("The catalog has no label vectors to search")
        query = np.asarray(query_vec, dtype=np.float64).reshape(-1)
        if query.shape[0] != self.vectors.shape[1]:
            raise InvalidParameterError(
                f"Query has dimension {query.shape[0]}, labels {self.vectors.shape[1]}"
            )
        norm = np.linalg.norm(query)
        if not np.isfinite(norm) or norm == 0:
            raise InvalidParameterError("Query vector must be finite and non-zero")
        sims = self.vectors @ (query / norm)
        order = np.lexsort((self.vector_ids, -sims))[:k]
        return [(int(self.vector_ids[n]), float(sims[n])) for n in order]

    def union_keyphrase_latents(
        self, keyphrase_vecs: Sequence[Sequence[float]], k: int
    ) -> Set[int]:
        """Union over keyphrases of their top-k latent ids."""
        if len(keyphrase_vecs) == 0:
            raise InvalidParameterError("At least one keyphrase vector is required")
        selected: Set[int] = set()
        for vec in keyphrase_vecs:
            selected.update(i for i, _ in self.top_k_latents(vec, k))
        return selected


def load_catalog(path: str, lenient: bool = False) -> LatentCatalog:
    """
    Reads a catalog JSONL file. A latent id seen twice keeps its last entry.

    Args:
        path (str): Catalog file.
        lenient (bool): Skip malformed lines instead of failing.

    Returns:
        LatentCatalog: The loaded catalog.
    """
    records = validate_records(path, LatentCatalogEntry, lenient=lenient, logger=logger)
    latest: Dict[int, LatentCatalogEntry] = {}
    for record in records:
        if record.latent_id in latest:
            logger.warning(f"Duplicate latent id {record.latent_id} in catalog; last entry wins")
        latest[record.latent_id] = record
    return LatentCatalog(latest[i] for i in sorted(latest))


def save_catalog(path: str, catalog: LatentCatalog) -> None:
    write_jsonl(
        path,
        (
            catalog.entries[i].model_dump(mode="json", exclude_none=True)
            for i in sorted(catalog.entries)
        ),
    )


def render_exhibit(
    doc_id: str,
    latent_id: int,
    corpus: Dict[str, CorpusRecord],
    doc: Optional[DocActivations] = None,
    max_tokens: Optional[int] = None,
) -> str:
    """
    Document text for a prompt. With token strings and activations available
    the latent's activating tokens are wrapped in << >>; otherwise the active
    token indices are listed after the text.

    Args:
        doc_id (str): Document id.
        latent_id (int): Latent whose activations are marked.
        corpus (dict): doc_id -> corpus record.
        doc (DocActivations): Token activations of the document, optional.
        max_tokens (int): Truncate the exhibit to this many whitespace tokens.
    """
    positions = set() if doc is None else set(int(p) for p in doc.token_positions(latent_id))
    record = corpus.get(doc_id)
    if record is not None and record.tokens:
        tokens = [
            f"<<{token}>>" if n in positions else token
            for n, token in enumerate(record.tokens)
        ]
        return " ".join(tokens[:max_tokens])
    text = record.text if record is not None else f"[document {doc_id}]"
    if max_tokens is not None:
        text = " ".join(text.split()[:max_tokens])
    if positions:
        return f"{text}\n(active on tokens {sorted(positions)})"
    return text


def make_relabel_task(
    latent_id: int,
    activating: Sequence[DocActivations],
    non_activating: Sequence[DocActivations],
    corpus: Optional[Dict[str, CorpusRecord]] = None,
    n_activating: int = 10,
    n_non_activating: int = 10,
) -> AnnotationTask:
    """
    Relabel task for one latent: up to n_activating documents where it fires,
    activating tokens marked, and up to n_non_activating where it does not.

    Raises:
        InvalidParameterError: If an "activating" document does not activate
            the latent, or a "non-activating" one does.
    """
    for doc in activating:
        if doc.token_positions(latent_id).size == 0:
            raise InvalidParameterError(
                f"Document '{doc.doc_id}' does not activate latent {latent_id}"
            )
    for doc in non_activating:
        if doc.token_positions(latent_id).size:
            raise InvalidParameterError(
                f"Document '{doc.doc_id}' activates latent {latent_id}"
            )
    corpus = corpus or {}
    return make_task(
        TaskKind.RELABEL,
        {
            "latent_id": int(latent_id),
            "activating": [
                render_exhibit(d.doc_id, latent_id, corpus, doc=d)
                for d in activating[:n_activating]
            ],
            "non_activating": [
                render_exhibit(d.doc_id, latent_id, corpus, doc=d)
                for d in non_activating[:n_non_activating]
            ],
        },
    )


def sample_relabel_docs(
    latent_id: int,
    docs: Sequence[DocActivations],
    n_activating: int,
    n_non_activating: int,
    seed: int,
) -> Tuple[List[DocActivations], List[DocActivations]]:
    """Random activating / non-activating documents of a latent."""
    active = [d for d in docs if d.token_positions(latent_id).size]
    inactive = [d for d in docs if not d.token_positions(latent_id).size]
    rng = np.random.default_rng([seed, int(latent_id)])
    pick_active = sorted(rng.permutation(len(active))[:n_activating])
    pick_inactive = sorted(rng.permutation(len(inactive))[:n_non_activating])
    return [active[n] for n in pick_active], [inactive[n] for n in pick_inactive]


def apply_relabels(
    catalog: LatentCatalog,
    latent_ids: Sequence[int],
    results: Sequence,
    label_vecs: Optional[np.ndarray] = None,
) -> LatentCatalog:
    """
    New catalog with gateway relabel results applied (provenance "relabeled").
    Failed result slots leave the old entry untouched. Without new label
    vectors a relabeled entry loses its old, now stale, vector.
    """
    if len(latent_ids) != len(results):
        raise InvalidParameterError("One result is needed per relabeled latent")
    entries = dict(catalog.entries)
    for n, (latent_id, result) in enumerate(zip(latent_ids, results)):
        if not isinstance(result, AnnotationResult) or result.kind is not TaskKind.RELABEL:
            logger.warning(f"Latent {latent_id} keeps its label: relabeling failed")
            continue
        vec = None if label_vecs is None else [float(v) for v in label_vecs[n]]
        entries[int(latent_id)] = LatentCatalogEntry(
            latent_id=int(latent_id),
            label=result.content["label"],
            label_vec=vec,
            provenance=Provenance.RELABELED,
        )
    return LatentCatalog(entries[i] for i in sorted(entries))
