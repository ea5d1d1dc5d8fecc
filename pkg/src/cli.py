"""
Command-line entry point: one subcommand per workflow.

Every subcommand accepts the same flags. Flags left out keep the value of the
config file (--config) or of the shipped defaults. Exit codes: 0 success,
1 internal failure, 2 bad input, 3 annotator gateway failure.
"""
import argparse
import json
import sys
from typing import Any, Callable, Dict, List, Optional

import yaml
from pydantic import ValidationError
from threadpoolctl import threadpool_limits

from benchmark import run_benchmark
from cluster import run_clustering
from correlate import run_correlations
from diff import run_diff
from embed import run_embed
from evaluate import run_evaluation
from exceptions import GatewayError, InputError
from logger import get_logger
from relabel import run_relabel
from retrieve import run_retrieval
from schema.run_schema import RunSchema, load_run_config
from synthesize import run_synthesis
from utils import set_seeds

logger = get_logger(task_name="cli")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2
EXIT_GATEWAY = 3

COMMANDS: Dict[str, Callable[[RunSchema], str]] = {
    "embed": run_embed,
    "diff": run_diff,
    "corr": run_correlations,
    "cluster": run_clustering,
    "retrieve": run_retrieval,
    "synth": run_synthesis,
    "eval": run_evaluation,
    "bench": run_benchmark,
    "relabel": run_relabel,
}

COMMAND_HELP = {
    "embed": "pool token activations (or encoded hidden states) into document embeddings",
    "diff": "rank latents by frequency difference between corpora",
    "corr": "mine correlated latent pairs",
    "cluster": "cluster documents, optionally along keyphrase-selected latents",
    "retrieve": "rank documents for property queries",
    "synth": "generate a synthetic corpus with planted structure",
    "eval": "evaluate reports against judgments or planted ground truth",
    "bench": "benchmark co-occurrence counting at configurable scale",
    "relabel": "relabel latents through the annotator gateway",
}

# (flag, config key, argparse keyword arguments); dots in the key nest
FLAGS = [
    ("--weights", "paths.weights", dict(help="SAE weight container (.saew)")),
    ("--activations", "paths.activations", dict(help="token activations or embedding store")),
    ("--hidden-states", "paths.hidden_states", dict(help="hidden-state JSONL to encode")),
    ("--others", "paths.others", dict(nargs="+", help="other corpora (diff) or the paired side (corr --cross)")),
    ("--catalog", "paths.catalog", dict(help="latent catalog JSONL")),
    ("--corpus", "paths.corpus", dict(help="document text JSONL")),
    ("--queries", "paths.queries", dict(help="retrieval queries JSONL")),
    ("--judgments", "paths.judgments", dict(help="relevance judgments JSONL")),
    ("--dense-vectors", "paths.dense_vectors", dict(help="dense document vectors JSONL")),
    ("--keyphrases", "paths.keyphrases", dict(help="keyphrases JSONL for targeted clustering")),
    ("--rankings", "paths.rankings", dict(help="reference ranking report to fuse with")),
    ("--reports", "paths.reports", dict(nargs="+", help="reports to evaluate")),
    ("--ground-truth", "paths.ground_truth", dict(help="ground truth of a synthetic corpus")),
    ("--synth-spec", "paths.synth_spec", dict(help="synthetic corpus spec (JSON or YAML)")),
    ("--out", "paths.out", dict(help="output directory")),
    ("--provider-config", "gateway.provider_config", dict(help="live provider config")),
    ("--cache-dir", "gateway.cache_dir", dict(help="gateway response cache directory")),
    ("--min-delta", "diff.min_delta", dict(type=float, help="minimum frequency difference")),
    ("--top-n", "diff.top_n", dict(type=int, help="diff entries kept in the report")),
    ("--trend", "diff.trend", dict(action="store_const", const=True, help="also report monotonic trends")),
    ("--summarize", "diff.summarize", dict(action="store_const", const=True, help="summarize and verify a hypothesis")),
    ("--npmi-min", "correlations.npmi_min", dict(type=float, help="minimum NPMI (overrides the preset)")),
    ("--preset", "correlations.preset", dict(choices=["real_world", "injection"], help="NPMI threshold preset")),
    ("--sim-max", "correlations.sim_max", dict(type=float, help="maximum label similarity")),
    ("--min-freq", "correlations.min_freq", dict(type=float, help="latent frequency floor")),
    ("--trivial-max", "correlations.trivial_max", dict(type=float, help="maximum trivial co-activation share")),
    ("--exclude-syntactic", "correlations.exclude_syntactic", dict(action="store_const", const=True, help="drop syntactic latents")),
    ("--verify", "correlations.verify", dict(action="store_const", const=True, help="judge surfaced and random pairs")),
    ("--cross", "correlations.cross", dict(action="store_const", const=True, help="correlate across aligned corpora")),
    ("--k-latents", "clustering.k_latents", dict(type=int, help="latents selected per keyphrase")),
    ("--k-clusters", "clustering.k_clusters", dict(type=int, help="number of clusters")),
    ("--describe", "clustering.describe", dict(action="store_const", const=True, help="describe every cluster")),
    ("--judge-accuracy", "clustering.judge_accuracy", dict(action="store_const", const=True, help="judged per-cluster accuracy")),
    ("--temperature", "retrieval.temperature", dict(type=float, help="softmax temperature of latent weights")),
    ("--k-candidates", "retrieval.k_candidates", dict(type=int, help="candidate latents per query")),
    ("--rerank", "retrieval.rerank", dict(action="store_const", const=True, help="rerank candidates through the gateway")),
    ("--latents", "relabel.latent_ids", dict(type=int, nargs="+", help="latents to relabel")),
    ("--n-docs", "bench.n_docs", dict(type=int, help="benchmark corpus size")),
    ("--d-sae", "bench.d_sae", dict(type=int, help="benchmark dictionary size")),
    ("--mean-active", "bench.mean_active", dict(type=int, help="benchmark active latents per document")),
    ("--seed", "seed", dict(type=int, help="random seed")),
    ("--threads", "threads", dict(type=int, help="worker cap (default: all cores)")),
    ("--mock", "mock", dict(action="store_const", const=True, help="offline mock annotator")),
    ("--live", "mock", dict(action="store_const", const=False, help="live annotator provider")),
    ("--lenient", "strict", dict(action="store_const", const=False, help="skip malformed input lines")),
]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="run config file (JSON or YAML)")
    for flag, key, kwargs in FLAGS:
        common.add_argument(flag, dest=key, default=None, **kwargs)

    parser = argparse.ArgumentParser(
        prog="sae-analyze",
        description="Sparse-autoencoder embeddings and corpus analyses.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, help_text in COMMAND_HELP.items():
        subparsers.add_parser(name, parents=[common], help=help_text, description=help_text)
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    """Nested config overrides of the flags that were given."""
    overrides: Dict[str, Any] = {}
    for _, key, _ in FLAGS:
        value = getattr(args, key, None)
        if value is None:
            continue
        if args.command == "bench" and key == "correlations.min_freq":
            key = "bench.min_freq"
        *parents, leaf = key.split(".")
        section = overrides
        for parent in parents:
            section = section.setdefault(parent, {})
        section[leaf] = value
    return overrides


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, GatewayError):
        return EXIT_GATEWAY
    if isinstance(
        exc,
        (InputError, FileNotFoundError, ValidationError, json.JSONDecodeError, yaml.YAMLError),
    ):
        return EXIT_INPUT
    return EXIT_INTERNAL


def main(argv: Optional[List[str]] = None) -> int:
    """
    Parses the command line, runs the command and maps failures to exit codes.

    Args:
        argv (list): Arguments without the program name; sys.argv by default.

    Returns:
        int: The process exit code.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_INPUT

    try:
        schema = load_run_config(args.config, overrides_from_args(args))
        set_seeds(schema.seed)
        with threadpool_limits(limits=schema.threads):
            COMMANDS[args.command](schema)
    except Exception as exc:
        code = exit_code_for(exc)
        logger.error(f"{args.command} failed (exit {code}): {exc}")
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
