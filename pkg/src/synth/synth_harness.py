"""
Synthetic corpora with planted structure (frequency differences, correlated
pairs, cluster blocks, relevance markers) and scoring of analysis reports
against the planted ground truth.

Plants act on activations directly. Every document draws from its own
generator seeded with (seed, corpus, ordinal), so output does not depend on
the number of workers.
"""
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
from joblib import Parallel, delayed
from sklearn.metrics import adjusted_rand_score

from analysis.ranking_metrics import average_precision
from catalog.latent_catalog import LatentCatalog, LatentCatalogEntry, save_catalog
from data_models.synth_spec_validator import (
    BlocksPlant,
    DiffPlant,
    PairPlant,
    RelevancePlant,
    SynthSpec,
)
from embeddings.activation_io import write_activations
from embeddings.embedding_store import DocActivations
from encoding.sae_encoder import TokenActivationRecord
from exceptions import CorpusMismatchError, InputError
from logger import get_logger
from utils import chunk_bounds, ensure_dir, save_json, write_jsonl

logger = get_logger(task_name=__name__)

VALUE_LOW, VALUE_HIGH = 0.1, 5.0
CORPUS_NAMES = ("A", "B")


@dataclass
class SynthCorpus:
    """Generated corpora, their synthetic catalog and the planted ground truth."""

    docs: Dict[str, List[DocActivations]]
    catalog: LatentCatalog
    queries: List[dict]
    judgments: List[dict]
    keyphrases: Dict[str, List[dict]]
    ground_truth: dict = field(default_factory=dict)


def doc_id_for(corpus: str, ordinal: int) -> str:
    return f"{corpus}-{ordinal:06d}"


def _log_uniform(rng: np.random.Generator, size: int) -> np.ndarray:
    """Log-uniform values, rounded to float32 as stored in activation files."""
    values = np.exp(rng.uniform(np.log(VALUE_LOW), np.log(VALUE_HIGH), size=size))
    return values.astype(np.float32).astype(np.float64)


def _far_apart(rng: np.random.Generator, n_tokens: int) -> Tuple[int, int]:
    """Two token positions at distance >= 2."""
    while True:
        a, b = (int(v) for v in rng.integers(0, n_tokens, size=2))
        if abs(a - b) >= 2:
            return a, b


def _relevant_ordinals(spec: SynthSpec) -> Dict[int, Set[int]]:
    chosen = {}
    for n, plant in enumerate(spec.plants):
        if isinstance(plant, RelevancePlant):
            rng = np.random.default_rng([spec.seed, 7, n])
            chosen[n] = set(int(o) for o in rng.choice(spec.n_docs, plant.n_relevant, replace=False))
    return chosen


def _generate_doc(
    spec: SynthSpec,
    corpus_index: int,
    ordinal: int,
    background: np.ndarray,
    relevant: Dict[int, Set[int]],
) -> Tuple[DocActivations, Dict[str, int]]:
    rng = np.random.default_rng([spec.seed, corpus_index, ordinal])
    n_tokens = spec.tokens_per_doc
    placed: Dict[int, List[int]] = {}
    blocks_of_doc: Dict[str, int] = {}

    def place(latent: int, token: Optional[int] = None) -> None:
        placed.setdefault(int(latent), []).append(
            int(rng.integers(0, n_tokens)) if token is None else token
        )

    n_background = rng.binomial(background.size, spec.background_rate) if background.size else 0
    for latent in rng.choice(background, size=n_background, replace=False) if n_background else []:
        place(latent)

    for n, plant in enumerate(spec.plants):
        if isinstance(plant, DiffPlant):
            rate = plant.rate_a if corpus_index == 0 else plant.rate_b
            if rng.random() < rate:
                place(plant.latent)
        elif corpus_index != 0:
            continue
        elif isinstance(plant, PairPlant):
            if rng.random() < plant.joint_rate:
                if plant.trivial:
                    token = int(rng.integers(0, n_tokens))
                    place(plant.i, token)
                    place(plant.j, token)
                else:
                    a, b = _far_apart(rng, n_tokens)
                    place(plant.i, a)
                    place(plant.j, b)
            elif plant.joint_rate < 1:
                rest = 1 - plant.joint_rate
                if rng.random() < (plant.marginal_i - plant.joint_rate) / rest:
                    place(plant.i)
                if rng.random() < (plant.marginal_j - plant.joint_rate) / rest:
                    place(plant.j)
        elif isinstance(plant, BlocksPlant):
            block = int(rng.integers(0, plant.k))
            blocks_of_doc[plant.axis] = block
            for b in range(plant.k):
                for latent in plant.block_latents(b):
                    on = b == block
                    if rng.random() < plant.noise:
                        on = not on
                    if on:
                        place(latent)
        elif isinstance(plant, RelevancePlant):
            if ordinal in relevant[n]:
                place(plant.latent)

    by_token: Dict[int, Dict[int, float]] = {}
    for latent in sorted(placed):
        values = _log_uniform(rng, len(placed[latent]))
        for token, value in zip(placed[latent], values):
            slot = by_token.setdefault(token, {})
            slot[latent] = max(slot.get(latent, 0.0), float(value))
    tokens = tuple(
        TokenActivationRecord.from_pairs(t, sorted(by_token.get(t, {}).items()))
        for t in range(n_tokens)
    )
    doc = DocActivations(doc_id_for(CORPUS_NAMES[corpus_index], ordinal), tokens)
    return doc, blocks_of_doc


def _generate_chunk(spec, corpus_index, start, stop, background, relevant):
    return [
        _generate_doc(spec, corpus_index, ordinal, background, relevant)
        for ordinal in range(start, stop)
    ]


def _unit(vec: np.ndarray) -> np.ndarray:
    return vec / np.linalg.norm(vec)


def _synthetic_catalog(spec: SynthSpec) -> Tuple[LatentCatalog, Dict[str, np.ndarray], Dict[int, np.ndarray]]:
    """
    Random unit label vectors; pair plants get label_sim_target exactly, block
    latents lie close to their axis vector, which doubles as the keyphrase.
    """
    rng = np.random.default_rng([spec.seed, 11])
    dim = spec.label_dim
    planted = set(spec.planted_latents())
    scope = range(spec.d_sae) if spec.catalog_scope == "all" else sorted(planted)
    vectors = {int(i): _unit(rng.standard_normal(dim)) for i in scope}
    labels = {int(i): f"synthetic latent {i}" for i in scope}
    axes: Dict[str, np.ndarray] = {}
    for plant in spec.plants:
        if isinstance(plant, PairPlant):
            base = vectors[plant.i]
            other = rng.standard_normal(dim)
            other = _unit(other - other.dot(base) * base)
            t = plant.label_sim_target
            vectors[plant.j] = _unit(t * base + np.sqrt(1 - t * t) * other)
            labels[plant.i] = f"planted pair latent {plant.i}"
            labels[plant.j] = f"planted pair latent {plant.j}"
        elif isinstance(plant, BlocksPlant):
            axis = _unit(rng.standard_normal(dim))
            axes[plant.axis] = axis
            for b in range(plant.k):
                for latent in plant.block_latents(b):
                    vectors[latent] = _unit(axis + 0.1 * _unit(rng.standard_normal(dim)))
                    labels[latent] = f"{plant.axis} block {b} latent {latent}"
        elif isinstance(plant, DiffPlant):
            labels[plant.latent] = f"planted diff latent {plant.latent}"
        elif isinstance(plant, RelevancePlant):
            labels[plant.latent] = f"relevance marker {plant.resolved_query_id}"
    catalog = LatentCatalog(
        LatentCatalogEntry(latent_id=i, label=labels[i], label_vec=vectors[i].tolist())
        for i in sorted(vectors)
    )
    return catalog, axes, vectors


def generate(spec: SynthSpec, n_jobs: int = 1) -> SynthCorpus:
    """
    Generates corpus A (and corpus B when the spec has diff plants) together
    with a synthetic catalog, queries, judgments, keyphrases and ground truth.
    Deterministic given the spec, whatever n_jobs.
    """
    planted = np.array(spec.planted_latents(), dtype=np.int64)
    background = np.setdiff1d(np.arange(spec.d_sae, dtype=np.int64), planted)
    relevant = _relevant_ordinals(spec)
    n_corpora = 2 if spec.has_second_corpus else 1
    docs: Dict[str, List[DocActivations]] = {}
    blocks: Dict[str, Dict[str, int]] = {}
    for corpus_index in range(n_corpora):
        bounds = chunk_bounds(spec.n_docs, max(1, n_jobs) * 4)
        if n_jobs == 1:
            chunks = [
                _generate_chunk(spec, corpus_index, a, b, background, relevant) for a, b in bounds
            ]
        else:
            chunks = Parallel(n_jobs=n_jobs)(
                delayed(_generate_chunk)(spec, corpus_index, a, b, background, relevant)
                for a, b in bounds
            )
        generated = [item for chunk in chunks for item in chunk]
        name = CORPUS_NAMES[corpus_index]
        docs[name] = [doc for doc, _ in generated]
        for doc, doc_blocks in generated:
            for axis, block in doc_blocks.items():
                blocks.setdefault(axis, {})[doc.doc_id] = block

    catalog, axes, vectors = _synthetic_catalog(spec)
    queries, judgments, relevance_truth = [], [], []
    for n, plant in enumerate(spec.plants):
        if isinstance(plant, RelevancePlant):
            query_id = plant.resolved_query_id
            relevant_ids = sorted(doc_id_for("A", o) for o in relevant[n])
            queries.append(
                {
                    "query_id": query_id,
                    "text": f"documents marked by latent {plant.latent}",
                    "vec": vectors[plant.latent].tolist(),
                }
            )
            judgments.extend(
                {"query_id": query_id, "doc_id": doc_id, "relevant": 1} for doc_id in relevant_ids
            )
            relevance_truth.append(
                {"query_id": query_id, "latent": plant.latent, "relevant_doc_ids": relevant_ids}
            )
    keyphrases = {
        axis: [{"text": axis, "vec": vec.tolist()}] for axis, vec in axes.items()
    }
    ground_truth = {
        "spec": spec.model_dump(mode="json"),
        "corpora": {name: [d.doc_id for d in corpus] for name, corpus in docs.items()},
        "diff": [p.model_dump(mode="json") for p in spec.plants if isinstance(p, DiffPlant)],
        "pairs": [p.model_dump(mode="json") for p in spec.plants if isinstance(p, PairPlant)],
        "blocks": [
            {**p.model_dump(mode="json"), "assignment": blocks.get(p.axis, {})}
            for p in spec.plants
            if isinstance(p, BlocksPlant)
        ],
        "relevance": relevance_truth,
    }
    return SynthCorpus(docs, catalog, queries, judgments, keyphrases, ground_truth)


def write_corpus(out_dir: str, corpus: SynthCorpus, d_sae: int) -> Dict[str, str]:
    """
    Writes activations_<corpus>.saea, corpus_<corpus>.jsonl, catalog.jsonl,
    queries.jsonl, judgments.jsonl, keyphrases_<axis>.jsonl and ground_truth.json.

    Returns:
        dict: Written file paths by role.
    """
    ensure_dir(out_dir)
    written = {}
    for name, docs in corpus.docs.items():
        path = os.path.join(out_dir, f"activations_{name}.saea")
        write_activations(path, docs, d_sae)
        written[f"activations_{name}"] = path
        text_path = os.path.join(out_dir, f"corpus_{name}.jsonl")
        write_jsonl(
            text_path,
            ({"id": d.doc_id, "text": f"synthetic document {d.doc_id}"} for d in docs),
        )
        written[f"corpus_{name}"] = text_path
    written["catalog"] = os.path.join(out_dir, "catalog.jsonl")
    save_catalog(written["catalog"], corpus.catalog)
    if corpus.queries:
        written["queries"] = os.path.join(out_dir, "queries.jsonl")
        write_jsonl(written["queries"], corpus.queries)
        written["judgments"] = os.path.join(out_dir, "judgments.jsonl")
        write_jsonl(written["judgments"], corpus.judgments)
    for axis, records in corpus.keyphrases.items():
        written[f"keyphrases_{axis}"] = os.path.join(out_dir, f"keyphrases_{axis}.jsonl")
        write_jsonl(written[f"keyphrases_{axis}"], records)
    written["ground_truth"] = os.path.join(out_dir, "ground_truth.json")
    save_json(written["ground_truth"], corpus.ground_truth)
    return written


def _precision_recall(found: Set, planted: Set) -> dict:
    hits = found & planted
    return {
        "precision": len(hits) / len(found) if found else None,
        "recall": len(hits) / len(planted) if planted else None,
        "n_found": len(found),
        "n_planted": len(planted),
        "n_recovered": len(hits),
    }


def _known_doc_ids(ground_truth: dict) -> Set[str]:
    return {doc_id for ids in ground_truth["corpora"].values() for doc_id in ids}


def _check_docs(doc_ids, ground_truth: dict, what: str) -> None:
    unknown = set(doc_ids) - _known_doc_ids(ground_truth)
    if unknown:
        raise CorpusMismatchError(
            f"The {what} report names documents outside the synthetic corpora: "
            f"{sorted(unknown)[:5]}"
        )


def evaluate_recovery(reports: Sequence[dict], ground_truth: dict) -> dict:
    """
    Scores analysis reports against planted ground truth: rank and recall of
    diff plants, precision/recall of planted pairs (overall and per joint
    rate), ARI of clusterings against every blocks axis, and MAP of
    rankings for the relevance plants.

    Args:
        reports: Loaded report dicts, recognized by their "kind".
        ground_truth (dict): The ground-truth sidecar of the synthetic corpus.

    Raises:
        CorpusMismatchError: If a report names documents the corpus does not have.
    """
    metrics: dict = {}
    for report in reports:
        kind = report.get("kind")
        if kind == "diff" and ground_truth["diff"]:
            ranked = [e["latent_id"] for e in report["entries"]]
            ranks = {
                str(p["latent"]): ranked.index(p["latent"]) + 1 if p["latent"] in ranked else None
                for p in ground_truth["diff"]
            }
            found = sum(r is not None for r in ranks.values())
            metrics["diff"] = {"ranks": ranks, "recall": found / len(ranks)}
        elif kind == "correlations" and ground_truth["pairs"]:
            found = {(p["i"], p["j"]) for p in report["pairs"]}
            planted = {tuple(sorted((p["i"], p["j"]))) for p in ground_truth["pairs"]}
            by_rate = {}
            for rate in sorted({p["joint_rate"] for p in ground_truth["pairs"]}):
                at_rate = {
                    tuple(sorted((p["i"], p["j"])))
                    for p in ground_truth["pairs"]
                    if p["joint_rate"] == rate
                }
                by_rate[str(rate)] = len(at_rate & found) / len(at_rate)
            metrics["pairs"] = {**_precision_recall(found, planted), "recall_by_rate": by_rate}
        elif kind == "clustering" and ground_truth["blocks"]:
            assignment = report["clustering"]["assignment"]
            _check_docs(assignment, ground_truth, "clustering")
            ari = {}
            for blocks in ground_truth["blocks"]:
                truth = blocks["assignment"]
                common = sorted(set(assignment) & set(truth))
                ari[blocks["axis"]] = float(
                    adjusted_rand_score(
                        [truth[d] for d in common], [assignment[d] for d in common]
                    )
                )
            metrics["clustering"] = {"ari": ari}
        elif kind == "retrieval" and ground_truth["relevance"]:
            aps = {}
            rankings = {r["query_id"]: r["ranked_doc_ids"] for r in report["rankings"]}
            for truth in ground_truth["relevance"]:
                ranked = rankings.get(truth["query_id"])
                if ranked is None:
                    continue
                _check_docs(ranked, ground_truth, "retrieval")
                relevant = set(truth["relevant_doc_ids"])
                aps[truth["query_id"]] = average_precision(
                    [d in relevant for d in ranked], len(relevant)
                )
            if aps:
                metrics["retrieval"] = {"ap": aps, "map": float(np.mean(list(aps.values())))}
        elif kind is None:
            raise InputError("Report without a 'kind' field cannot be scored")
    return metrics
