import os

# Path to the root directory which contains the src directory
ROOT_DIR = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

# Path into the working volume:
#   set to environment variable SAE_WORKSPACE_PATH if it exists
#   else: set to default path which would be <path_to_root>/workspace/
WORKSPACE = os.environ.get("SAE_WORKSPACE_PATH", os.path.join(ROOT_DIR, "workspace"))

# Path to inputs
INPUT_DIR = os.path.join(WORKSPACE, "inputs")
# Default SAE weight container
WEIGHTS_FILE_PATH = os.path.join(INPUT_DIR, "sae_weights.saew")
# Default latent catalog
CATALOG_FILE_PATH = os.path.join(INPUT_DIR, "catalog.jsonl")

# Path to outputs
OUTPUT_DIR = os.path.join(WORKSPACE, "outputs")
# Name of the pooled embedding store written by the embed command
EMBEDDINGS_FILE_NAME = "embeddings.saea"
# Report file names inside the output directory
DIFF_REPORT_FILE_NAME = "diff_report.json"
CORR_REPORT_FILE_NAME = "correlation_report.json"
CORR_ARRAYS_FILE_NAME = "correlation_arrays.csv"
CLUSTER_REPORT_FILE_NAME = "clustering_report.json"
RANKING_REPORT_FILE_NAME = "ranking_report.json"
EVAL_REPORT_FILE_NAME = "eval_report.json"
BENCH_REPORT_FILE_NAME = "bench_report.json"
BUNDLE_FILE_NAME = "hypothesis_bundle.json"
EMBED_REPORT_FILE_NAME = "embedding_report.json"
SYNTH_REPORT_FILE_NAME = "synth_report.json"
RELABEL_REPORT_FILE_NAME = "relabel_report.json"
RELABELED_CATALOG_FILE_NAME = "catalog_relabeled.jsonl"

# Path to the gateway response cache (append-only directory of JSON records)
GATEWAY_CACHE_DIR = os.path.join(WORKSPACE, "gateway_cache")

# Path to logs directory inside outputs directory
ERRORS_DIR = os.path.join(OUTPUT_DIR, "errors")


def error_file_path(task_name: str, errors_dir: str = ERRORS_DIR) -> str:
    """Error file path for a task, e.g. outputs/errors/corr_error.txt"""
    return os.path.join(errors_dir, f"{task_name}_error.txt")


# Paths inside the source directory
# Path to source directory
SRC_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
# Path to config directory
CONFIG_DIR = os.path.join(SRC_DIR, "config")
# Path to default run configuration (all thresholds and defaults)
DEFAULT_CONFIG_FILE_PATH = os.path.join(CONFIG_DIR, "default_config.json")
# Path to gateway provider defaults
PROVIDER_CONFIG_FILE_PATH = os.path.join(CONFIG_DIR, "provider_config.json")
# Path to versioned prompt templates
TEMPLATES_DIR = os.path.join(CONFIG_DIR, "templates")
