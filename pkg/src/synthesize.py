import argparse
import os

from config import paths
from data_models.synth_spec_validator import validate_synth_spec
from logger import get_logger, log_error
from schema.run_schema import RunSchema, load_run_config, report_inputs, save_report
from synth.synth_harness import generate, write_corpus
from utils import TimeAndMemoryTracker, read_json_as_dict, resolve_n_jobs

logger = get_logger(task_name="synth")


def run_synthesis(schema: RunSchema) -> str:
    """
    Generates synthetic corpora with planted structure and writes them, with
    their catalog, queries, judgments, keyphrases and ground truth, to the
    output directory.

    A spec without its own seed uses the run seed.

    Args:
        schema (RunSchema): The run configuration.

    Returns:
        str: Path of the synth report listing the written files.
    """
    try:
        with TimeAndMemoryTracker(logger) as tracker:
            logger.info("Reading the synthetic corpus spec...")
            spec_dict = read_json_as_dict(schema.require_path("synth_spec"))
            spec_dict.setdefault("seed", schema.seed)
            spec = validate_synth_spec(spec_dict)

            logger.info(
                f"Generating {spec.n_docs} documents per corpus with {len(spec.plants)} plants..."
            )
            corpus = generate(spec, n_jobs=resolve_n_jobs(schema.threads))
            written = write_corpus(schema.output_dir, corpus, spec.d_sae)

            report = {
                "kind": "synth",
                "inputs": report_inputs(schema, ["synth_spec"]),
                "spec": spec.model_dump(mode="json"),
                "files": {role: os.path.basename(path) for role, path in written.items()},
                "n_docs": {name: len(docs) for name, docs in corpus.docs.items()},
                "n_catalog_entries": len(corpus.catalog),
                "n_queries": len(corpus.queries),
            }

        report_path = save_report(
            report,
            paths.SYNTH_REPORT_FILE_NAME,
            schema,
            meta={"elapsed_s": tracker.elapsed_time},
        )
        logger.info(f"Wrote synthetic corpus to {schema.output_dir}")
        return report_path

    except Exception as exc:
        err_msg = "Error occurred during corpus synthesis."
        logger.error(f"{err_msg} Error: {str(exc)}")
        log_error(err_msg, exc, schema.error_file_path("synth"))
        raise


def parse_arguments() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Generate a synthetic corpus with planted structure.")
    parser.add_argument("--config", type=str, default=None, help="Run config file (JSON or YAML).")
    return parser.parse_args()


if __name__ == "__main__":
    args = parse_arguments()
    run_synthesis(load_run_config(args.config))
