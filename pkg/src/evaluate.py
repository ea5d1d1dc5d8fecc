import argparse
from itertools import combinations
from typing import Dict, List, Sequence, Tuple

import numpy as np

from analysis.ranking_metrics import rbo, rrf_fuse
from analysis.retrieval import RetrievalRanking, evaluate_rankings, load_judgments
from config import paths
from exceptions import InputError
from logger import get_logger, log_error
from schema.run_schema import (
    RunSchema,
    load_report,
    load_run_config,
    report_inputs,
    save_report,
)
from synth.synth_harness import evaluate_recovery
from utils import TimeAndMemoryTracker, read_json_as_dict

logger = get_logger(task_name="eval")


def _rankings(report: dict) -> List[RetrievalRanking]:
    return [RetrievalRanking.from_dict(r) for r in report.get("rankings", [])]


def ranking_agreement(
    retrieval_reports: Sequence[Tuple[str, dict]], p: float, depth: int
) -> List[dict]:
    """RBO between the rankings of every two retrieval reports, per shared query."""
    agreement = []
    for (path_a, report_a), (path_b, report_b) in combinations(retrieval_reports, 2):
        ranked_b = {r.query_id: r.ranked_doc_ids for r in _rankings(report_b)}
        per_query = {
            r.query_id: rbo(r.ranked_doc_ids, ranked_b[r.query_id], p=p, depth=depth)
            for r in _rankings(report_a)
            if r.query_id in ranked_b
        }
        agreement.append(
            {
                "a": path_a,
                "b": path_b,
                "rbo": per_query,
                "mean_rbo": float(np.mean(list(per_query.values()))) if per_query else None,
            }
        )
    return agreement


def fused_evaluation(
    retrieval_reports: Sequence[Tuple[str, dict]],
    judgments: Dict[str, Dict[str, int]],
    k_rrf: int,
    k: int,
) -> dict:
    """Scores the reciprocal-rank fusion of all retrieval reports' rankings."""
    by_query: Dict[str, List[List[str]]] = {}
    for _, report in retrieval_reports:
        for ranking in _rankings(report):
            by_query.setdefault(ranking.query_id, []).append(ranking.ranked_doc_ids)
    fused = [
        (query_id, [doc_id for doc_id, _ in rrf_fuse(rankings, k_rrf=k_rrf)])
        for query_id, rankings in sorted(by_query.items())
        if len(rankings) >= 2
    ]
    return evaluate_rankings(fused, judgments, k=k)


def run_evaluation(schema: RunSchema) -> str:
    """
    Evaluates analysis reports: retrieval rankings against relevance
    judgments (AP, P@K, NAP, MAP), ranking agreement (RBO) and fusion between
    retrieval reports, and recovery of planted structure against a synthetic
    ground truth.

    Args:
        schema (RunSchema): The run configuration.

    Returns:
        str: Path of the evaluation report.
    """
    try:
        with TimeAndMemoryTracker(logger) as tracker:
            config = schema.retrieval
            report_paths = schema.paths["reports"]
            if not report_paths:
                raise FileNotFoundError("No reports to evaluate (use --reports)")
            if not schema.path("judgments") and not schema.path("ground_truth"):
                raise InputError("Evaluation needs --judgments or --ground-truth")

            logger.info(f"Loading {len(report_paths)} reports...")
            reports = [(path, load_report(path)) for path in report_paths]
            retrieval_reports = [(p, r) for p, r in reports if r.get("kind") == "retrieval"]

            report = {
                "kind": "evaluation",
                "inputs": report_inputs(schema, ["judgments", "ground_truth"]),
                "reports": [{"file": p, "kind": r.get("kind")} for p, r in reports],
            }

            if schema.path("judgments"):
                judgments = load_judgments(schema.path("judgments"), lenient=schema.lenient)
                logger.info("Scoring rankings against the judgments...")
                report["retrieval"] = [
                    {
                        "file": path,
                        **evaluate_rankings(
                            _rankings(r), judgments, k=config["precision_k"]
                        ),
                    }
                    for path, r in retrieval_reports
                ]
                if len(retrieval_reports) >= 2:
                    report["fused"] = fused_evaluation(
                        retrieval_reports, judgments, config["k_rrf"], config["precision_k"]
                    )

            if len(retrieval_reports) >= 2:
                report["agreement"] = ranking_agreement(
                    retrieval_reports, config["rbo_p"], config["rbo_depth"]
                )

            if schema.path("ground_truth"):
                logger.info("Scoring recovery of the planted structure...")
                report["recovery"] = evaluate_recovery(
                    [r for _, r in reports], read_json_as_dict(schema.path("ground_truth"))
                )

        report_path = save_report(
            report,
            paths.EVAL_REPORT_FILE_NAME,
            schema,
            meta={"elapsed_s": tracker.elapsed_time},
        )
        logger.info(f"Saved evaluation report to {report_path}")
        return report_path

    except Exception as exc:
        err_msg = "Error occurred during evaluation."
        logger.error(f"{err_msg} Error: {str(exc)}")
        log_error(err_msg, exc, schema.error_file_path("eval"))
        raise


def parse_arguments() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Evaluate analysis reports.")
    parser.add_argument("--config", type=str, default=None, help="Run config file (JSON or YAML).")
    return parser.parse_args()


if __name__ == "__main__":
    args = parse_arguments()
    run_evaluation(load_run_config(args.config))
