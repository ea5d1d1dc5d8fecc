import argparse
import os
from typing import Iterator, Tuple

import numpy as np

from config import paths
from embeddings.activation_io import (
    activation_file_d_sae,
    ingest_activations,
    ingest_hidden_states,
    save_embeddings,
)
from embeddings.embedding_store import DocActivations, pool_corpus
from encoding.sae_encoder import SaeWeights, encode_batch, load_weights
from exceptions import EmptyCorpusError
from logger import get_logger, log_error
from schema.run_schema import RunSchema, load_run_config, report_inputs, save_report
from utils import TimeAndMemoryTracker, resolve_n_jobs

logger = get_logger(task_name="embed")


def encode_hidden_states(path: str, weights: SaeWeights) -> Iterator[DocActivations]:
    """Token activations of every document of a hidden-state JSONL file."""
    for record in ingest_hidden_states(path):
        hidden = np.asarray(record.hidden, dtype=np.float64)
        yield DocActivations(record.id, tuple(encode_batch(hidden, weights)))


def _token_docs(schema: RunSchema) -> Tuple[Iterator[DocActivations], int]:
    activations = schema.path("activations")
    if activations:
        d_sae = activation_file_d_sae(activations)
        if d_sae is None and schema.path("weights"):
            d_sae = load_weights(schema.path("weights")).d_sae
        return ingest_activations(activations, progress=True), d_sae

    hidden_states = schema.require_path("hidden_states")
    weights = load_weights(schema.require_path("weights"))
    logger.info(
        f"Encoding hidden states with d_model={weights.d_model}, d_sae={weights.d_sae}"
    )
    return encode_hidden_states(hidden_states, weights), weights.d_sae


def run_embed(schema: RunSchema) -> str:
    """
    Pools token activations into one sparse embedding per document and writes
    the embedding store.

    Token activations come from an activation file, or are computed from
    hidden states with the SAE weights.

    Args:
        schema (RunSchema): The run configuration.

    Returns:
        str: Path of the written embedding store.
    """
    try:
        with TimeAndMemoryTracker(logger) as tracker:
            logger.info("Loading token activations...")
            docs, d_sae = _token_docs(schema)

            logger.info("Pooling documents...")
            embs = pool_corpus(docs, n_jobs=resolve_n_jobs(schema.threads))
            if not embs:
                raise EmptyCorpusError("No documents to embed")
            if d_sae is None:
                d_sae = 1 + max(
                    (int(e.latent_ids[-1]) for e in embs if len(e)), default=0
                )

            store_path = os.path.join(schema.output_dir, paths.EMBEDDINGS_FILE_NAME)
            logger.info(f"Saving embedding store to {store_path}...")
            save_embeddings(store_path, embs, d_sae)

            n_active = np.array([len(e) for e in embs], dtype=np.float64)
            report = {
                "kind": "embedding",
                "inputs": report_inputs(
                    schema, ["activations", "hidden_states", "weights"]
                ),
                "store": paths.EMBEDDINGS_FILE_NAME,
                "d_sae": d_sae,
                "n_docs": len(embs),
                "mean_active_latents": float(n_active.mean()),
                "n_empty_docs": int(np.sum(n_active == 0)),
            }

        save_report(
            report,
            paths.EMBED_REPORT_FILE_NAME,
            schema,
            meta={"elapsed_s": tracker.elapsed_time},
        )
        logger.info(
            f"Embedded {report['n_docs']} documents, "
            f"mean active latents {report['mean_active_latents']:.2f}"
        )
        return store_path

    except Exception as exc:
        err_msg = "Error occurred during embedding."
        logger.error(f"{err_msg} Error: {str(exc)}")
        log_error(err_msg, exc, schema.error_file_path("embed"))
        raise


def parse_arguments() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Pool SAE activations into document embeddings.")
    parser.add_argument("--config", type=str, default=None, help="Run config file (JSON or YAML).")
    return parser.parse_args()


if __name__ == "__main__":
    args = parse_arguments()
    run_embed(load_run_config(args.config))
