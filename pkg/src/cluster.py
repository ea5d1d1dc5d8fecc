import argparse
from typing import Dict, List, Optional, Sequence

import numpy as np

from analysis.clustering import (
    ClusterDescription,
    ClusterResult,
    cluster_embeddings,
    conductance_zscore,
    describe_cluster,
    judged_assignment,
    make_assign_cluster_task,
    make_cluster_label_task,
    mutual_knn_graph,
    per_cluster_accuracy,
    targeted_cluster,
)
from catalog.latent_catalog import LatentCatalog, load_catalog
from config import paths
from data_models.record_validator import (
    CorpusRecord,
    DenseVectorRecord,
    KeyphraseRecord,
    validate_records,
)
from embeddings.activation_io import load_corpus, load_embeddings
from embeddings.embedding_store import SaeEmbedding, binarize
from exceptions import CorpusMismatchError, InputError
from gateway.annotator_gateway import AnnotatorGateway, embed_texts, gateway_from_config
from logger import get_logger, log_error
from schema.run_schema import RunSchema, load_run_config, report_inputs, save_report
from utils import TimeAndMemoryTracker, resolve_n_jobs

logger = get_logger(task_name="cluster")


def keyphrase_vectors(
    path: str, gateway_factory, lenient: bool = False
) -> np.ndarray:
    """Keyphrase vectors from the file; phrases without one are embedded by the gateway."""
    records = validate_records(path, KeyphraseRecord, lenient=lenient, logger=logger)
    if not records:
        raise InputError(f"No keyphrases in '{path}'")
    missing = [k for k, r in enumerate(records) if r.vec is None]
    embedded = {}
    if missing:
        logger.info(f"Embedding {len(missing)} keyphrases...")
        vecs = embed_texts(gateway_factory(), [records[k].text for k in missing])
        embedded = dict(zip(missing, vecs))
    return np.array(
        [embedded[k] if k in embedded else r.vec for k, r in enumerate(records)],
        dtype=np.float64,
    )


def cluster_quality(
    result: ClusterResult, dense_path: str, config: dict, seed: int, lenient: bool
) -> Dict[str, Optional[float]]:
    """Conductance z-score of every cluster in the dense-vector mutual-kNN graph."""
    records = validate_records(dense_path, DenseVectorRecord, lenient=lenient, logger=logger)
    by_id = {r.id: r.vec for r in records}
    missing = [d for d in result.doc_ids if d not in by_id]
    if missing:
        raise CorpusMismatchError(f"{len(missing)} clustered documents lack dense vectors, e.g. {missing[:3]}")
    dense = np.array([by_id[d] for d in result.doc_ids], dtype=np.float64)
    graph = mutual_knn_graph(dense, config["knn_k"])
    scores = {}
    for cluster in range(result.n_clusters):
        members = result.members(cluster)
        if not 1 < members.size < len(result.doc_ids):
            scores[str(cluster)] = None
            continue
        scores[str(cluster)] = conductance_zscore(
            members, dense, n_random=config["n_random"], knn_k=config["knn_k"], seed=seed, graph=graph
        )
    return scores


def describe_clusters(
    result: ClusterResult,
    embs: Sequence[SaeEmbedding],
    similarity: np.ndarray,
    config: dict,
) -> List[ClusterDescription]:
    by_id = {e.doc_id: binarize(e) for e in embs}
    binary = [by_id[d] for d in result.doc_ids]
    descriptions = []
    for cluster in range(result.n_clusters):
        if result.members(cluster).size == len(result.doc_ids):
            continue
        descriptions.append(
            describe_cluster(
                cluster,
                result,
                binary,
                similarity,
                n_top_latents=config["n_top_latents"],
                n_central=config["n_central"],
            )
        )
    return descriptions


def judge_accuracy(
    gateway: AnnotatorGateway,
    result: ClusterResult,
    cluster_labels: List[str],
    corpus: Dict[str, CorpusRecord],
) -> Dict[str, float]:
    """Re-assigns every document through the gateway and scores each cluster."""
    doc_ids = [d for d in result.doc_ids if d in corpus]
    tasks = [make_assign_cluster_task(cluster_labels, corpus[d].text) for d in doc_ids]
    logger.info(f"Asking the judge to assign {len(tasks)} documents...")
    judged = judged_assignment(doc_ids, gateway.submit_batch(tasks, progress=True))
    original = {d: c for d, c in result.assignment.items() if d in judged}
    return {str(c): acc for c, acc in per_cluster_accuracy(original, judged).items()}


def run_clustering(schema: RunSchema) -> str:
    """
    Clusters documents by the Jaccard similarity of their active latents,
    optionally restricted to the latents matching a set of keyphrases.

    Args:
        schema (RunSchema): The run configuration.

    Returns:
        str: Path of the clustering report.
    """
    try:
        with TimeAndMemoryTracker(logger) as tracker:
            config = schema.clustering
            n_jobs = resolve_n_jobs(schema.threads)
            gateway: Optional[AnnotatorGateway] = None

            def get_gateway() -> AnnotatorGateway:
                nonlocal gateway
                if gateway is None:
                    gateway = gateway_from_config(schema.gateway, schema.mock)
                return gateway

            logger.info("Loading embeddings...")
            embs = load_embeddings(schema.require_path("activations"), progress=True)

            catalog: Optional[LatentCatalog] = None
            if schema.path("catalog"):
                catalog = load_catalog(schema.path("catalog"), lenient=schema.lenient)

            params = {
                "k_clusters": config["k_clusters"],
                "seed": schema.seed,
                "targeted": schema.path("keyphrases") is not None,
            }
            report = {
                "kind": "clustering",
                "inputs": report_inputs(
                    schema, ["activations", "catalog", "corpus", "keyphrases", "dense_vectors"]
                ),
                "params": params,
            }

            if schema.path("keyphrases"):
                if catalog is None:
                    raise FileNotFoundError("Targeted clustering needs --catalog")
                vecs = keyphrase_vectors(schema.path("keyphrases"), get_gateway, schema.lenient)
                logger.info(f"Clustering along {len(vecs)} keyphrases...")
                result, similarity, selected = targeted_cluster(
                    embs,
                    catalog,
                    vecs,
                    k_latents=config["k_latents"],
                    k_clusters=config["k_clusters"],
                    seed=schema.seed,
                    n_jobs=n_jobs,
                    max_iter=config["max_iter"],
                )
                params["k_latents"] = config["k_latents"]
                report["selected_latents"] = sorted(selected)
            else:
                logger.info("Clustering...")
                result, similarity = cluster_embeddings(
                    embs,
                    config["k_clusters"],
                    seed=schema.seed,
                    n_jobs=n_jobs,
                    max_iter=config["max_iter"],
                )
            report["clustering"] = result.to_dict()

            corpus = load_corpus(schema.path("corpus"), schema.lenient) if schema.path("corpus") else {}
            if config["describe"] or config["judge_accuracy"]:
                logger.info("Describing clusters...")
                descriptions = describe_clusters(result, embs, similarity, config)
                if corpus:
                    tasks = [make_cluster_label_task(d, catalog, corpus) for d in descriptions]
                    for description, answer in zip(descriptions, get_gateway().submit_batch(tasks)):
                        if isinstance(answer, Exception):
                            raise answer
                        description.label = answer.content["text"]
                report["descriptions"] = [d.to_dict() for d in descriptions]

                if config["judge_accuracy"]:
                    if not corpus:
                        raise FileNotFoundError("Judged accuracy needs --corpus")
                    labels = {d.cluster: d.label or "" for d in descriptions}
                    cluster_labels = [labels.get(c, "") for c in range(result.n_clusters)]
                    report["judged_accuracy"] = judge_accuracy(
                        get_gateway(), result, cluster_labels, corpus
                    )

            if schema.path("dense_vectors"):
                logger.info("Scoring cluster conductance...")
                report["conductance_z"] = cluster_quality(
                    result, schema.path("dense_vectors"), config, schema.seed, schema.lenient
                )

        report_path = save_report(
            report,
            paths.CLUSTER_REPORT_FILE_NAME,
            schema,
            meta={"elapsed_s": tracker.elapsed_time},
        )
        logger.info(f"Saved clustering report to {report_path}")
        return report_path

    except Exception as exc:
        err_msg = "Error occurred during clustering."
        logger.error(f"{err_msg} Error: {str(exc)}")
        log_error(err_msg, exc, schema.error_file_path("cluster"))
        raise


def parse_arguments() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Cluster documents by their SAE embeddings.")
    parser.add_argument("--config", type=str, default=None, help="Run config file (JSON or YAML).")
    return parser.parse_args()


if __name__ == "__main__":
    args = parse_arguments()
    run_clustering(load_run_config(args.config))
