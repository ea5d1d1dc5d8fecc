import argparse
from typing import Dict, List, Optional, Sequence

import numpy as np

from analysis.ranking_metrics import rbo, rrf_fuse
from analysis.retrieval import (
    RetrievalRanking,
    load_queries,
    score_documents,
    select_candidate_latents,
)
from catalog.latent_catalog import load_catalog
from config import paths
from data_models.record_validator import QueryRecord
from embeddings.activation_io import load_embeddings
from exceptions import InputError
from gateway.annotator_gateway import AnnotatorGateway, embed_texts, gateway_from_config
from logger import get_logger, log_error
from schema.run_schema import (
    RunSchema,
    load_report,
    load_run_config,
    report_inputs,
    save_report,
)
from utils import TimeAndMemoryTracker

logger = get_logger(task_name="retrieve")


def query_vectors(
    queries: Sequence[QueryRecord], gateway: Optional[AnnotatorGateway]
) -> Dict[str, np.ndarray]:
    """Query vectors from the file; queries without one are embedded by the gateway."""
    missing = [q for q in queries if q.vec is None]
    embedded: Dict[str, np.ndarray] = {}
    if missing:
        if gateway is None:
            raise InputError("Queries without vectors need the annotator gateway")
        logger.info(f"Embedding {len(missing)} query texts...")
        vecs = embed_texts(gateway, [q.text for q in missing])
        embedded = {q.query_id: vec for q, vec in zip(missing, vecs)}
    return {
        q.query_id: embedded[q.query_id] if q.vec is None else np.asarray(q.vec, dtype=np.float64)
        for q in queries
    }


def fuse_with_reference(
    rankings: Sequence[RetrievalRanking], reference_path: str, k_rrf: int, p: float, depth: int
) -> dict:
    """
    Reciprocal-rank fusion of our rankings with a reference ranking report
    (e.g. a dense retriever), plus the RBO agreement of each pair.
    """
    reference = {
        r["query_id"]: r["ranked_doc_ids"] for r in load_report(reference_path).get("rankings", [])
    }
    fused, agreement = [], {}
    for ranking in rankings:
        other = reference.get(ranking.query_id)
        if other is None:
            logger.warning(f"Reference has no ranking for query '{ranking.query_id}'")
            continue
        merged = rrf_fuse([ranking.ranked_doc_ids, other], k_rrf=k_rrf)
        fused.append(
            {
                "query_id": ranking.query_id,
                "ranked_doc_ids": [doc_id for doc_id, _ in merged],
                "scores": [score for _, score in merged],
            }
        )
        agreement[ranking.query_id] = rbo(ranking.ranked_doc_ids, other, p=p, depth=depth)
    return {"fused_rankings": fused, "rbo_with_reference": agreement}


def run_retrieval(schema: RunSchema) -> str:
    """
    Ranks the corpus for every query by the activation of the latents whose
    labels best match the query.

    Args:
        schema (RunSchema): The run configuration.

    Returns:
        str: Path of the ranking report.
    """
    try:
        with TimeAndMemoryTracker(logger) as tracker:
            config = schema.retrieval

            logger.info("Loading embeddings...")
            embs = load_embeddings(schema.require_path("activations"), progress=True)
            catalog = load_catalog(schema.require_path("catalog"), lenient=schema.lenient)
            queries: List[QueryRecord] = load_queries(
                schema.require_path("queries"), lenient=schema.lenient
            )
            if not queries:
                raise InputError("No queries to run")

            gateway = None
            if config["rerank"] or any(q.vec is None for q in queries):
                gateway = gateway_from_config(schema.gateway, schema.mock)
            vectors = query_vectors(queries, gateway)

            rankings = []
            for query in queries:
                candidates = select_candidate_latents(
                    vectors[query.query_id],
                    catalog,
                    k_candidates=config["k_candidates"],
                    gateway=gateway if config["rerank"] else None,
                    query_text=query.text,
                )
                rankings.append(
                    score_documents(
                        embs, candidates, config["temperature"], query_id=query.query_id
                    )
                )
            logger.info(f"Ranked {len(embs)} documents for {len(rankings)} queries")

            report = {
                "kind": "retrieval",
                "inputs": report_inputs(schema, ["activations", "catalog", "queries", "rankings"]),
                "temperature": config["temperature"],
                "k_candidates": config["k_candidates"],
                "rerank": config["rerank"],
                "rankings": [ranking.to_dict() for ranking in rankings],
                "degenerate_queries": [r.query_id for r in rankings if r.degenerate],
            }
            if schema.path("rankings"):
                logger.info("Fusing with the reference rankings...")
                report.update(
                    fuse_with_reference(
                        rankings,
                        schema.path("rankings"),
                        config["k_rrf"],
                        config["rbo_p"],
                        config["rbo_depth"],
                    )
                )

        report_path = save_report(
            report,
            paths.RANKING_REPORT_FILE_NAME,
            schema,
            meta={"elapsed_s": tracker.elapsed_time},
        )
        logger.info(f"Saved ranking report to {report_path}")
        return report_path

    except Exception as exc:
        err_msg = "Error occurred during retrieval."
        logger.error(f"{err_msg} Error: {str(exc)}")
        log_error(err_msg, exc, schema.error_file_path("retrieve"))
        raise


def parse_arguments() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Rank documents for property queries.")
    parser.add_argument("--config", type=str, default=None, help="Run config file (JSON or YAML).")
    return parser.parse_args()


if __name__ == "__main__":
    args = parse_arguments()
    run_retrieval(load_run_config(args.config))
