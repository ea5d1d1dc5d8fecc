"""
Dataset diffing: latents ranked by frequency difference between corpora, and
the hypothesis bundles handed to a summarizer.
"""
from dataclasses import asdict, dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from catalog.latent_catalog import LatentCatalog, render_exhibit
from data_models.record_validator import CorpusRecord
from embeddings.embedding_store import DocActivations, InvertedIndex
from exceptions import EmptyCorpusError, InvalidParameterError
from gateway.tasks import AnnotationTask, TaskKind, make_judge_task, make_task
from logger import get_logger

logger = get_logger(task_name=__name__)

# absorbs float rounding of differences of count ratios at the threshold
_DELTA_SLACK = 1e-9


@dataclass(frozen=True)
class DiffEntry:
    """Frequency difference of one latent; delta = freq_target - freq_other exactly."""

    latent_id: int
    freq_target: float
    freq_other: float
    delta: float
    activating_doc_ids: Tuple[str, ...] = ()
    non_activating_doc_ids: Tuple[str, ...] = ()
    label: Optional[str] = None

    def to_dict(self) -> Dict:
        entry = asdict(self)
        entry["examples"] = {
            "activating": list(entry.pop("activating_doc_ids")),
            "non_activating": list(entry.pop("non_activating_doc_ids")),
        }
        if entry["label"] is None:
            del entry["label"]
        return entry


@dataclass(frozen=True)
class TrendEntry:
    latent_id: int
    frequencies: Tuple[float, ...]
    rise: float
    label: Optional[str] = None


def _check_non_empty(*indexes: InvertedIndex) -> None:
    for idx in indexes:
        if idx.n_docs == 0:
            raise EmptyCorpusError("Cannot diff an empty corpus")


def _frequencies(idx: InvertedIndex, latent_ids: np.ndarray) -> np.ndarray:
    counts = np.array([idx.document_frequency(i) for i in latent_ids], dtype=np.float64)
    return counts / idx.n_docs


def _first_active(idx: InvertedIndex, latent_id: int, n: int) -> Tuple[str, ...]:
    return tuple(idx.doc_ids[int(o)] for o in idx.posting(latent_id)[:n])


def _first_inactive(idx: InvertedIndex, latent_id: int, n: int) -> Tuple[str, ...]:
    if n <= 0:
        return ()
    posting = idx.posting(latent_id)
    picked = []
    for ordinal in range(idx.n_docs):
        if len(picked) == n:
            break
        pos = np.searchsorted(posting, ordinal)
        if pos < posting.size and posting[pos] == ordinal:
            continue
        picked.append(idx.doc_ids[ordinal])
    return tuple(picked)


def _rank(entries: List[DiffEntry]) -> List[DiffEntry]:
    return sorted(entries, key=lambda e: (-e.delta, e.latent_id))


def diff_one_vs_rest(
    idx_target: InvertedIndex,
    idx_others: Sequence[InvertedIndex],
    min_delta: float = 0.03,
    n_examples: int = 2,
) -> List[DiffEntry]:
    """
    Latents whose target frequency differs from the maximum frequency among
    the other corpora by at least min_delta in absolute value.

    Args:
        idx_target (InvertedIndex): The target corpus.
        idx_others (Sequence[InvertedIndex]): One or more other corpora.
        min_delta (float): Minimum |delta|.
        n_examples (int): Activating (target) and non-activating (the other
            corpus with the maximum frequency) example ids per entry.

    Returns:
        List[DiffEntry]: Sorted by delta descending, ties by latent id.
    """
    if not idx_others:
        raise InvalidParameterError("One-vs-rest diffing needs at least one other corpus")
    _check_non_empty(idx_target, *idx_others)
    latent_ids = np.union1d(
        idx_target.latent_ids,
        np.concatenate([o.latent_ids for o in idx_others]),
    ).astype(np.int64)
    if latent_ids.size == 0:
        return []
    freq_target = _frequencies(idx_target, latent_ids)
    freq_others = np.vstack([_frequencies(o, latent_ids) for o in idx_others])
    argmax_other = freq_others.argmax(axis=0)
    freq_other = freq_others[argmax_other, np.arange(latent_ids.size)]
    delta = freq_target - freq_other
    keep = np.flatnonzero(np.abs(delta) >= min_delta - _DELTA_SLACK)
    entries = []
    for n in keep:
        latent_id = int(latent_ids[n])
        other = idx_others[int(argmax_other[n])]
        entries.append(
            DiffEntry(
                latent_id=latent_id,
                freq_target=float(freq_target[n]),
                freq_other=float(freq_other[n]),
                delta=float(delta[n]),
                activating_doc_ids=_first_active(idx_target, latent_id, n_examples),
                non_activating_doc_ids=_first_inactive(other, latent_id, n_examples),
            )
        )
    return _rank(entries)


def diff_pair(
    idx_a: InvertedIndex,
    idx_b: InvertedIndex,
    min_delta: float = 0.03,
    n_examples: int = 2,
) -> List[DiffEntry]:
    """Frequency diff of corpus A (target) against corpus B."""
    return diff_one_vs_rest(idx_a, [idx_b], min_delta=min_delta, n_examples=n_examples)


def top_diff_latents(entries: Sequence[DiffEntry], n: int = 200) -> List[DiffEntry]:
    """First n entries by delta descending; ties at the cutoff are truncated by latent id."""
    if n < 0:
        raise InvalidParameterError(f"n must be non-negative. Given {n}")
    return _rank(list(entries))[:n]


def with_labels(entries: Sequence[DiffEntry], catalog: Optional[LatentCatalog]) -> List[DiffEntry]:
    if catalog is None:
        return list(entries)
    return [replace(e, label=catalog.label(e.latent_id)) for e in entries]


def export_hypothesis_bundle(
    entries: Sequence[DiffEntry],
    catalog: LatentCatalog,
    corpus: Dict[str, CorpusRecord],
    query: str,
    docs: Optional[Dict[str, DocActivations]] = None,
    token_budget: int = 8000,
    max_example_tokens: int = 256,
    max_hypotheses: int = 10,
) -> Tuple[AnnotationTask, List[int]]:
    """
    Summarize task bundling each entry's label, delta and one activating plus
    one non-activating example. Entries are added in order until the token
    budget (whitespace tokens of the exhibits) is spent.

    Args:
        entries: Ranked diff entries.
        catalog (LatentCatalog): Source of the latent labels.
        corpus (dict): doc_id -> corpus record, for example texts.
        query (str): The user's question about the difference.
        docs (dict): doc_id -> token activations, for marking activating tokens.
        token_budget (int): Cap on the exhibits' total whitespace tokens.
        max_example_tokens (int): Cap per example text.
        max_hypotheses (int): Number of hypotheses asked for.

    Returns:
        (task, skipped latent ids). Entries without a label or without both
        kinds of example are skipped with a warning.
    """
    docs = docs or {}
    exhibits, skipped, used = [], [], 0
    for entry in entries:
        label = catalog.label(entry.latent_id)
        if label is None:
            logger.warning(f"Latent {entry.latent_id} has no label; left out of the bundle")
            skipped.append(entry.latent_id)
            continue
        if not entry.activating_doc_ids or not entry.non_activating_doc_ids:
            logger.warning(f"Latent {entry.latent_id} lacks examples; left out of the bundle")
            skipped.append(entry.latent_id)
            continue
        positive_id = entry.activating_doc_ids[0]
        negative_id = entry.non_activating_doc_ids[0]
        exhibit = {
            "latent_id": entry.latent_id,
            "label": label,
            "delta": round(entry.delta, 6),
            "activating_example": render_exhibit(
                positive_id, entry.latent_id, corpus, docs.get(positive_id), max_example_tokens
            ),
            "non_activating_example": render_exhibit(
                negative_id, entry.latent_id, corpus, None, max_example_tokens
            ),
        }
        cost = len(exhibit["activating_example"].split()) + len(
            exhibit["non_activating_example"].split()
        ) + len(label.split())
        if used + cost > token_budget:
            logger.info(f"Token budget reached after {len(exhibits)} exhibits")
            break
        used += cost
        exhibits.append(exhibit)
    task = make_task(
        TaskKind.SUMMARIZE,
        {"query": query, "exhibits": exhibits, "max_hypotheses": max_hypotheses},
    )
    return task, skipped


def monotonic_trend_latents(
    indexes_in_order: Sequence[InvertedIndex], min_delta: float = 0.03
) -> List[TrendEntry]:
    """
    Latents whose frequency never decreases along an ordered sequence of
    corpora (e.g. successive model generations) and rises by at least
    min_delta from the first to the last.

    Returns:
        List[TrendEntry]: Sorted by rise descending, ties by latent id.
    """
    if len(indexes_in_order) < 2:
        raise InvalidParameterError("A trend needs at least two corpora")
    _check_non_empty(*indexes_in_order)
    latent_ids = np.unique(np.concatenate([idx.latent_ids for idx in indexes_in_order]))
    if latent_ids.size == 0:
        return []
    freqs = np.vstack([_frequencies(idx, latent_ids) for idx in indexes_in_order])
    non_decreasing = np.all(np.diff(freqs, axis=0) >= 0, axis=0)
    rise = freqs[-1] - freqs[0]
    keep = np.flatnonzero(non_decreasing & (rise >= min_delta - _DELTA_SLACK))
    trends = [
        TrendEntry(
            latent_id=int(latent_ids[n]),
            frequencies=tuple(float(f) for f in freqs[:, n]),
            rise=float(rise[n]),
        )
        for n in keep
    ]
    return sorted(trends, key=lambda t: (-t.rise, t.latent_id))


def verified_frequency_difference(
    judged_target: Sequence[bool], judged_other: Sequence[bool]
) -> float:
    """Share of YES judgments in the target minus the share in the other dataset."""
    if len(judged_target) == 0 or len(judged_other) == 0:
        raise InvalidParameterError("Both datasets need at least one judgment")
    return float(np.mean(judged_target)) - float(np.mean(judged_other))


def make_verify_tasks(hypothesis: str, texts: Sequence[str]) -> List[AnnotationTask]:
    """One yes/no judge task per text: does the hypothesis' property hold?"""
    return [make_judge_task(hypothesis, text) for text in texts]
