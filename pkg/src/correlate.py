import argparse
import os
from typing import Dict, List, Optional, Sequence, Set

import numpy as np
import pandas as pd

from analysis.correlations import (
    PairStats,
    find_correlated_pairs,
    find_cross_correlated_pairs,
    make_syntactic_tasks,
    qualifying_latents,
    sample_random_pairs,
    syntactic_exclusion_set,
    verified_npmi,
)
from catalog.latent_catalog import LatentCatalog, load_catalog
from config import paths
from data_models.record_validator import CorpusRecord
from data_models.report_validator import validate_arrays
from embeddings.activation_io import ingest_activations, load_corpus, load_index
from embeddings.embedding_store import DocActivations, binarize, build_index, pool_corpus
from exceptions import InvalidParameterError
from gateway.annotator_gateway import AnnotatorGateway, gateway_from_config
from gateway.tasks import judged_yes, make_judge_task
from logger import get_logger, log_error
from schema.run_schema import RunSchema, load_run_config, report_inputs, save_report
from utils import TimeAndMemoryTracker, resolve_n_jobs, save_dataframe_as_csv

logger = get_logger(task_name="corr")


def has_token_structure(docs: Sequence[DocActivations]) -> bool:
    """False for pooled stores, where every document is a single token."""
    return any(len(d.tokens) > 1 for d in docs)


def syntactic_latents(
    gateway: AnnotatorGateway, catalog: LatentCatalog, latent_ids: Sequence[int]
) -> Set[int]:
    labeled, tasks = make_syntactic_tasks(catalog, latent_ids)
    logger.info(f"Classifying {len(tasks)} latent labels as syntactic or semantic...")
    return syntactic_exclusion_set(labeled, gateway.submit_batch(tasks, progress=True))


def judged_presence(
    gateway: AnnotatorGateway,
    catalog: LatentCatalog,
    latent_ids: Sequence[int],
    texts: Sequence[str],
) -> Dict[int, List[bool]]:
    """Yes/no judgment of every labeled latent's property on every text."""
    labeled = sorted({int(i) for i in latent_ids if catalog.label(i) is not None})
    tasks = [make_judge_task(catalog.label(i), text) for i in labeled for text in texts]
    judged = judged_yes(gateway.submit_batch(tasks, progress=True))
    n = len(texts)
    return {i: judged[k * n : (k + 1) * n] for k, i in enumerate(labeled)}


def verification_arrays(
    surfaced: Sequence[PairStats],
    random_pairs: Sequence[PairStats],
    presence: Optional[Dict[int, List[bool]]] = None,
) -> pd.DataFrame:
    """
    One row per surfaced and random pair with its corpus NPMI and, when
    judgments are available, the NPMI of the judged label presence.
    """
    rows = []
    for group, pairs in (("surfaced", surfaced), ("random", random_pairs)):
        for pair in pairs:
            verified = np.nan
            if presence is not None and pair.i in presence and pair.j in presence:
                try:
                    verified = verified_npmi(presence[pair.i], presence[pair.j])
                except InvalidParameterError:
                    verified = np.nan
            rows.append(
                {"group": group, "i": pair.i, "j": pair.j, "npmi": pair.npmi, "verified_npmi": verified}
            )
    columns = ["group", "i", "j", "npmi", "verified_npmi"]
    return validate_arrays(pd.DataFrame(rows, columns=columns))


def _sample_texts(
    doc_ids: Sequence[str], corpus: Dict[str, CorpusRecord], n: int, seed: int
) -> List[str]:
    known = [d for d in doc_ids if d in corpus]
    rng = np.random.default_rng(seed)
    picked = sorted(rng.choice(len(known), size=min(n, len(known)), replace=False))
    return [corpus[known[k]].text for k in picked]


def run_correlations(schema: RunSchema) -> str:
    """
    Mines latent pairs that co-occur far more often than chance, keeps the
    ones with dissimilar labels and non-trivial co-activation, and writes the
    correlation report with the verification arrays next to it.

    Args:
        schema (RunSchema): The run configuration.

    Returns:
        str: Path of the correlation report.
    """
    try:
        with TimeAndMemoryTracker(logger) as tracker:
            config = schema.correlations
            n_jobs = resolve_n_jobs(schema.threads)
            npmi_min = schema.npmi_min
            lenient = schema.lenient

            activations = schema.require_path("activations")
            logger.info("Loading token activations...")
            docs = list(ingest_activations(activations, progress=True))
            idx = build_index([binarize(e) for e in pool_corpus(docs, n_jobs=n_jobs)])
            if not has_token_structure(docs):
                logger.warning("Activations carry no token structure; trivial filter skipped")
                docs = None

            catalog: Optional[LatentCatalog] = None
            if schema.path("catalog"):
                logger.info("Loading catalog...")
                catalog = load_catalog(schema.path("catalog"), lenient=lenient)

            gateway = None
            excluded: Set[int] = set()
            if config["exclude_syntactic"] and catalog is not None:
                gateway = gateway_from_config(schema.gateway, schema.mock)
                excluded = syntactic_latents(
                    gateway, catalog, qualifying_latents(idx, config["min_freq"])
                )
                logger.info(f"Excluding {len(excluded)} syntactic latents")

            report = {
                "kind": "correlations",
                "inputs": report_inputs(schema, ["activations", "catalog", "corpus"]),
                "mode": "cross" if config["cross"] else "within",
                "n_docs": idx.n_docs,
                "thresholds": {
                    "preset": config["preset"],
                    "npmi_min": npmi_min,
                    "sim_max": config["sim_max"],
                    "min_freq": config["min_freq"],
                    "trivial_max": config["trivial_max"],
                    "trivial_sample": config["trivial_sample"],
                    "lenient": lenient,
                    "trivial_filter": docs is not None,
                },
                "excluded_syntactic": sorted(excluded),
            }

            if config["cross"]:
                if not schema.paths["others"]:
                    raise FileNotFoundError("Cross correlations need --others (the paired side)")
                logger.info("Mining cross-corpus pairs...")
                pairs = find_cross_correlated_pairs(
                    idx,
                    load_index(schema.paths["others"][0], progress=True),
                    npmi_min=npmi_min,
                    min_freq=config["min_freq"],
                    catalog=catalog,
                    sim_max=config["sim_max"],
                    n_examples=config["n_examples"],
                )
            else:
                logger.info("Counting co-occurrences...")
                pairs = find_correlated_pairs(
                    idx,
                    catalog,
                    npmi_min=npmi_min,
                    sim_max=config["sim_max"],
                    min_freq=config["min_freq"],
                    trivial_max=config["trivial_max"],
                    docs=docs,
                    trivial_sample=config["trivial_sample"],
                    lenient=lenient,
                    exclude=excluded,
                    n_shards=config["n_shards"],
                    n_jobs=n_jobs,
                    seed=schema.seed,
                    n_examples=config["n_examples"],
                    progress=True,
                )
            logger.info(f"{len(pairs)} pairs pass the filters")
            report["n_qualifying_latents"] = int(qualifying_latents(idx, config["min_freq"]).size)
            report["pairs"] = [pair.to_dict() for pair in pairs]

            random_pairs = []
            if not config["cross"]:
                random_pairs = sample_random_pairs(
                    idx, config["n_random_pairs"], config["min_freq"], seed=schema.seed
                )

            presence = None
            if config["verify"] and catalog is not None and schema.path("corpus"):
                corpus = load_corpus(schema.path("corpus"), lenient=lenient)
                texts = _sample_texts(
                    idx.doc_ids, corpus, config["verify_sample_size"], schema.seed
                )
                gateway = gateway or gateway_from_config(schema.gateway, schema.mock)
                latent_ids = {p.i for p in pairs + random_pairs} | {p.j for p in pairs + random_pairs}
                logger.info(f"Judging {len(latent_ids)} latent labels on {len(texts)} documents...")
                presence = judged_presence(gateway, catalog, latent_ids, texts)
                report["verify_sample_size"] = len(texts)

            arrays = verification_arrays(pairs, random_pairs, presence)
            save_dataframe_as_csv(arrays, os.path.join(schema.output_dir, paths.CORR_ARRAYS_FILE_NAME))
            report["arrays"] = paths.CORR_ARRAYS_FILE_NAME

        report_path = save_report(
            report,
            paths.CORR_REPORT_FILE_NAME,
            schema,
            meta={"elapsed_s": tracker.elapsed_time},
        )
        logger.info(f"Saved correlation report to {report_path}")
        return report_path

    except Exception as exc:
        err_msg = "Error occurred during correlation mining."
        logger.error(f"{err_msg} Error: {str(exc)}")
        log_error(err_msg, exc, schema.error_file_path("corr"))
        raise


def parse_arguments() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Mine correlated latent pairs.")
    parser.add_argument("--config", type=str, default=None, help="Run config file (JSON or YAML).")
    return parser.parse_args()


if __name__ == "__main__":
    args = parse_arguments()
    run_correlations(load_run_config(args.config))
