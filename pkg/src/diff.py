import argparse
import os
from typing import Dict, List, Optional, Sequence, Tuple

from analysis.diffing import (
    diff_one_vs_rest,
    export_hypothesis_bundle,
    make_verify_tasks,
    monotonic_trend_latents,
    top_diff_latents,
    verified_frequency_difference,
    with_labels,
)
from catalog.latent_catalog import LatentCatalog, load_catalog
from config import paths
from data_models.record_validator import CorpusRecord
from embeddings.activation_io import ingest_activations, load_corpus, load_index
from embeddings.embedding_store import (
    DocActivations,
    InvertedIndex,
    binarize,
    build_index,
    pool_corpus,
)
from gateway.annotator_gateway import AnnotatorGateway, gateway_from_config
from gateway.tasks import AnnotationTask, judged_yes
from logger import get_logger, log_error
from schema.run_schema import RunSchema, load_run_config, report_inputs, save_report
from utils import TimeAndMemoryTracker, file_stem, resolve_n_jobs, save_json

logger = get_logger(task_name="diff")


def _target_docs(path: str, n_jobs: int) -> Tuple[InvertedIndex, Dict[str, DocActivations]]:
    logger.info(f"Loading {path}...")
    docs = list(ingest_activations(path, progress=True))
    embs = pool_corpus(docs, n_jobs=n_jobs)
    return build_index([binarize(e) for e in embs]), {d.doc_id: d for d in docs}


def _texts(idx: InvertedIndex, corpus: Dict[str, CorpusRecord], n: int) -> List[str]:
    return [corpus[d].text for d in idx.doc_ids if d in corpus][:n]


def summarize_and_verify(
    gateway: AnnotatorGateway,
    task: AnnotationTask,
    corpus: Dict[str, CorpusRecord],
    idx_target: InvertedIndex,
    idx_others: Sequence[InvertedIndex],
    n_verify: int,
) -> dict:
    """
    Asks the gateway to summarize a hypothesis bundle, then checks the
    hypothesis with yes/no judgments on documents of each side.
    """
    logger.info("Summarizing the hypothesis bundle...")
    hypothesis = gateway.submit(task).content["text"]
    summary = {"hypothesis": hypothesis}
    texts_target = _texts(idx_target, corpus, n_verify)
    texts_other = [t for idx in idx_others for t in _texts(idx, corpus, n_verify)][:n_verify]
    if texts_target and texts_other:
        logger.info("Verifying the hypothesis on both sides...")
        judged = judged_yes(
            gateway.submit_batch(make_verify_tasks(hypothesis, texts_target + texts_other))
        )
        summary["verified_delta"] = verified_frequency_difference(
            judged[: len(texts_target)], judged[len(texts_target) :]
        )
    return summary


def run_diff(schema: RunSchema) -> str:
    """
    Ranks latents by the frequency difference between a target corpus and the
    other corpora, and optionally exports or summarizes the top differences.

    Args:
        schema (RunSchema): The run configuration.

    Returns:
        str: Path of the diff report.
    """
    try:
        with TimeAndMemoryTracker(logger) as tracker:
            config = schema.diff
            n_jobs = resolve_n_jobs(schema.threads)
            target_path = schema.require_path("activations")
            other_paths = schema.paths["others"]
            if not other_paths:
                raise FileNotFoundError("No 'others' input configured (use --others)")

            idx_target, docs = _target_docs(target_path, n_jobs)
            logger.info("Loading the other corpora...")
            idx_others = [load_index(path, progress=True) for path in other_paths]

            catalog: Optional[LatentCatalog] = None
            if schema.path("catalog"):
                logger.info("Loading catalog...")
                catalog = load_catalog(schema.path("catalog"), lenient=schema.lenient)

            logger.info("Diffing latent frequencies...")
            entries = diff_one_vs_rest(
                idx_target,
                idx_others,
                min_delta=config["min_delta"],
                n_examples=config["n_examples"],
            )
            top = with_labels(top_diff_latents(entries, config["top_n"]), catalog)
            logger.info(f"{len(entries)} latents pass min_delta={config['min_delta']}")

            report = {
                "kind": "diff",
                "inputs": report_inputs(schema, ["activations", "catalog", "corpus"]),
                "target": file_stem(target_path),
                "others": [file_stem(path) for path in other_paths],
                "n_docs": {
                    file_stem(path): idx.n_docs
                    for path, idx in zip([target_path, *other_paths], [idx_target, *idx_others])
                },
                "min_delta": config["min_delta"],
                "n_entries": len(entries),
                "entries": [entry.to_dict() for entry in top],
            }

            if config["trend"]:
                logger.info("Finding monotonic trends across the corpora...")
                trends = monotonic_trend_latents([*idx_others, idx_target], config["min_delta"])
                report["trend_order"] = [*report["others"], report["target"]]
                report["trends"] = [
                    {
                        "latent_id": t.latent_id,
                        "frequencies": list(t.frequencies),
                        "rise": t.rise,
                        "label": catalog.label(t.latent_id) if catalog else None,
                    }
                    for t in trends[: config["top_n"]]
                ]

            if catalog is not None and schema.path("corpus"):
                corpus = load_corpus(schema.path("corpus"), lenient=schema.lenient)
                task, skipped = export_hypothesis_bundle(
                    top,
                    catalog,
                    corpus,
                    config["query"],
                    docs=docs,
                    token_budget=config["token_budget"],
                    max_example_tokens=config["max_example_tokens"],
                )
                save_json(
                    os.path.join(schema.output_dir, paths.BUNDLE_FILE_NAME),
                    task.model_dump(mode="json"),
                )
                report["bundle"] = {"file": paths.BUNDLE_FILE_NAME, "skipped_latents": skipped}
                if config["summarize"]:
                    gateway = gateway_from_config(schema.gateway, schema.mock)
                    report["bundle"].update(
                        summarize_and_verify(
                            gateway, task, corpus, idx_target, idx_others, config["n_verify"]
                        )
                    )

        report_path = save_report(
            report,
            paths.DIFF_REPORT_FILE_NAME,
            schema,
            meta={"elapsed_s": tracker.elapsed_time},
        )
        logger.info(f"Saved diff report to {report_path}")
        return report_path

    except Exception as exc:
        err_msg = "Error occurred during dataset diffing."
        logger.error(f"{err_msg} Error: {str(exc)}")
        log_error(err_msg, exc, schema.error_file_path("diff"))
        raise


def parse_arguments() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Diff latent frequencies between corpora.")
    parser.add_argument("--config", type=str, default=None, help="Run config file (JSON or YAML).")
    return parser.parse_args()


if __name__ == "__main__":
    args = parse_arguments()
    run_diff(load_run_config(args.config))
