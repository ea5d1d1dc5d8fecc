import argparse
import os
from typing import List, Sequence

import numpy as np

from catalog.latent_catalog import (
    LatentCatalog,
    apply_relabels,
    load_catalog,
    make_relabel_task,
    sample_relabel_docs,
    save_catalog,
)
from config import paths
from embeddings.activation_io import ingest_activations, load_corpus
from embeddings.embedding_store import DocActivations
from gateway.annotator_gateway import AnnotatorGateway, embed_texts, gateway_from_config
from gateway.tasks import AnnotationResult
from logger import get_logger, log_error
from schema.run_schema import RunSchema, load_run_config, report_inputs, save_report
from utils import TimeAndMemoryTracker

logger = get_logger(task_name="relabel")


def latents_to_relabel(
    requested: Sequence[int], catalog: LatentCatalog, docs: Sequence[DocActivations]
) -> List[int]:
    """The requested latents, else every latent active in the corpus without a label."""
    if requested:
        return sorted({int(i) for i in requested})
    active = set()
    for doc in docs:
        for token in doc.tokens:
            active.update(int(i) for i in token.latent_ids)
    return sorted(i for i in active if i not in catalog)


def new_label_vectors(gateway: AnnotatorGateway, results: Sequence) -> np.ndarray:
    """Embeds each new label; rows of failed relabels stay zero and are ignored."""
    done = [n for n, r in enumerate(results) if isinstance(r, AnnotationResult)]
    vecs = embed_texts(gateway, [results[n].content["label"] for n in done])
    matrix = np.zeros((len(results), vecs.shape[1] if done else 0))
    matrix[done] = vecs
    return matrix


def run_relabel(schema: RunSchema) -> str:
    """
    Relabels latents from exhibits of documents where they fire and where they
    do not, and writes the updated catalog with fresh label vectors.

    Args:
        schema (RunSchema): The run configuration.

    Returns:
        str: Path of the relabeled catalog.
    """
    try:
        with TimeAndMemoryTracker(logger) as tracker:
            config = schema.relabel
            logger.info("Loading token activations...")
            docs = list(ingest_activations(schema.require_path("activations"), progress=True))
            catalog = load_catalog(schema.require_path("catalog"), lenient=schema.lenient)
            corpus = load_corpus(schema.path("corpus"), schema.lenient) if schema.path("corpus") else {}

            latent_ids = latents_to_relabel(config["latent_ids"], catalog, docs)
            logger.info(f"Relabeling {len(latent_ids)} latents...")
            tasks = []
            for latent_id in latent_ids:
                activating, non_activating = sample_relabel_docs(
                    latent_id, docs, config["n_activating"], config["n_non_activating"], schema.seed
                )
                tasks.append(
                    make_relabel_task(
                        latent_id,
                        activating,
                        non_activating,
                        corpus,
                        n_activating=config["n_activating"],
                        n_non_activating=config["n_non_activating"],
                    )
                )

            gateway = gateway_from_config(schema.gateway, schema.mock)
            results = gateway.submit_batch(tasks, progress=True)
            label_vecs = new_label_vectors(gateway, results) if latent_ids else None
            relabeled = apply_relabels(catalog, latent_ids, results, label_vecs)

            catalog_path = os.path.join(schema.output_dir, paths.RELABELED_CATALOG_FILE_NAME)
            save_catalog(catalog_path, relabeled)
            failed = [i for i, r in zip(latent_ids, results) if not isinstance(r, AnnotationResult)]
            report = {
                "kind": "relabel",
                "inputs": report_inputs(schema, ["activations", "catalog", "corpus"]),
                "catalog": paths.RELABELED_CATALOG_FILE_NAME,
                "relabeled": {
                    str(i): relabeled.label(i) for i in latent_ids if i not in failed
                },
                "failed": failed,
            }

        save_report(
            report,
            paths.RELABEL_REPORT_FILE_NAME,
            schema,
            meta={"elapsed_s": tracker.elapsed_time},
        )
        logger.info(f"Saved relabeled catalog to {catalog_path}")
        return catalog_path

    except Exception as exc:
        err_msg = "Error occurred during relabeling."
        logger.error(f"{err_msg} Error: {str(exc)}")
        log_error(err_msg, exc, schema.error_file_path("relabel"))
        raise


def parse_arguments() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Relabel latents through the annotator gateway.")
    parser.add_argument("--config", type=str, default=None, help="Run config file (JSON or YAML).")
    return parser.parse_args()


if __name__ == "__main__":
    args = parse_arguments()
    run_relabel(load_run_config(args.config))
