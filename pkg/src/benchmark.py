import argparse
import time

import numpy as np

from analysis.correlations import iter_cooccurrence_shards, qualifying_latents
from config import paths
from embeddings.embedding_store import InvertedIndex
from exceptions import InvalidParameterError
from logger import get_logger, log_error
from schema.run_schema import RunSchema, load_run_config, save_report
from utils import TimeAndMemoryTracker, resolve_n_jobs

logger = get_logger(task_name="bench")

# latent frequencies are drawn log-uniformly from this range before rescaling
FREQ_RANGE = (1e-5, 0.2)


def synthetic_bench_index(
    n_docs: int, d_sae: int, mean_active: int, seed: int = 0
) -> InvertedIndex:
    """
    Random index with a heavy-tailed latent frequency profile: a few latents
    fire often, most rarely, and documents activate mean_active latents on
    average.

    Args:
        n_docs (int): Number of documents.
        d_sae (int): Dictionary size.
        mean_active (int): Expected active latents per document.
        seed (int): Seed of the generator.

    Returns:
        InvertedIndex: The benchmark corpus.
    """
    if n_docs < 1 or d_sae < 1 or not 0 < mean_active <= d_sae:
        raise InvalidParameterError(
            f"Need n_docs, d_sae >= 1 and 0 < mean_active <= d_sae; "
            f"given {n_docs}, {d_sae}, {mean_active}"
        )
    rng = np.random.default_rng(seed)
    low, high = np.log(FREQ_RANGE[0]), np.log(FREQ_RANGE[1])
    freqs = np.exp(rng.uniform(low, high, size=d_sae))
    freqs = np.minimum(freqs * (mean_active / freqs.sum()), 1.0)
    counts = rng.binomial(n_docs, freqs)
    postings = {
        latent_id: np.sort(rng.choice(n_docs, size=int(count), replace=False)).astype(np.int64)
        for latent_id, count in enumerate(counts)
        if count > 0
    }
    doc_ids = tuple(f"bench-{n:06d}" for n in range(n_docs))
    return InvertedIndex(n_docs, doc_ids, postings)


def run_benchmark(schema: RunSchema) -> str:
    """
    Times exact co-occurrence counting on a random corpus of configurable
    scale. Timings and peak memory go to the report's sidecar; the report
    itself holds only the (seed-determined) workload.

    Args:
        schema (RunSchema): The run configuration.

    Returns:
        str: Path of the bench report.
    """
    try:
        config = schema.bench
        n_jobs = resolve_n_jobs(schema.threads)
        logger.info(
            f"Building a benchmark corpus: {config['n_docs']} docs, d_sae={config['d_sae']}, "
            f"{config['mean_active']} active latents per doc..."
        )
        idx = synthetic_bench_index(
            config["n_docs"], config["d_sae"], config["mean_active"], seed=schema.seed
        )
        n_qualifying = int(qualifying_latents(idx, config["min_freq"]).size)

        logger.info(f"Counting co-occurrences of {n_qualifying} qualifying latents...")
        n_pairs, n_shards_done = 0, 0
        with TimeAndMemoryTracker(logger) as tracker:
            start = time.perf_counter()
            for i, _, _ in iter_cooccurrence_shards(
                idx,
                config["min_freq"],
                n_shards=schema.correlations["n_shards"],
                n_jobs=n_jobs,
                progress=True,
            ):
                n_pairs += int(i.size)
                n_shards_done += 1
            counting_s = time.perf_counter() - start

        report = {
            "kind": "bench",
            "params": {**config, "n_shards": schema.correlations["n_shards"]},
            "n_postings": int(sum(p.size for p in idx.postings.values())),
            "n_qualifying_latents": n_qualifying,
            "n_pairs": n_pairs,
            "n_shards": n_shards_done,
        }
        report_path = save_report(
            report,
            paths.BENCH_REPORT_FILE_NAME,
            schema,
            meta={
                "counting_s": counting_s,
                "peak_memory_mb": tracker.peak_memory_mb,
                "n_jobs": n_jobs,
            },
        )
        logger.info(f"Counted {n_pairs} co-occurring pairs in {counting_s:.2f} s")
        return report_path

    except Exception as exc:
        err_msg = "Error occurred during the co-occurrence benchmark."
        logger.error(f"{err_msg} Error: {str(exc)}")
        log_error(err_msg, exc, schema.error_file_path("bench"))
        raise


def parse_arguments() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Benchmark co-occurrence counting.")
    parser.add_argument("--config", type=str, default=None, help="Run config file (JSON or YAML).")
    return parser.parse_args()


if __name__ == "__main__":
    args = parse_arguments()
    run_benchmark(load_run_config(args.config))
