import copy
import os
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

import analysis
import catalog
import embeddings
import encoding
import gateway
import synth
from config import paths
from data_models.config_validator import (
    PRESET_NPMI_MIN,
    CorrelationPreset,
    validate_run_config,
)
from data_models.report_validator import validate_report
from utils import ensure_dir, read_json_as_dict, save_json

MODULE_PACKAGES = (analysis, catalog, embeddings, encoding, gateway, synth)


class RunSchema:
    """
    A class for loading and providing access to a validated run configuration.

    Task scripts read every path, threshold and flag through this class instead
    of indexing the raw dictionary, so the layering of defaults, config file and
    command-line overrides stays in one place.
    """

    def __init__(self, config_dict: dict) -> None:
        """
        Initializes a new instance of the `RunSchema` class.

        Args:
            config_dict (dict): The validated configuration dictionary.
        """
        self.config = config_dict

    @property
    def seed(self) -> int:
        return self.config["seed"]

    @property
    def threads(self) -> Optional[int]:
        """
        Gets the worker cap.

        Returns:
            Optional[int]: The --threads value, None for all available cores.
        """
        return self.config["threads"]

    @property
    def strict(self) -> bool:
        return self.config["strict"]

    @property
    def lenient(self) -> bool:
        """Skip malformed input lines instead of failing."""
        return not self.config["strict"] or self.config["correlations"]["lenient"]

    @property
    def mock(self) -> bool:
        return self.config["mock"]

    @property
    def paths(self) -> Dict[str, Any]:
        return self.config["paths"]

    def path(self, name: str, default: Optional[str] = None) -> Optional[str]:
        """
        Gets a configured path.

        Args:
            name (str): Path key, e.g. "activations".
            default (str): Returned when the path is not configured.

        Returns:
            Optional[str]: The configured path or the default.
        """
        return self.config["paths"].get(name) or default

    def require_path(self, name: str) -> str:
        """
        Gets a configured input path that the task cannot run without.

        Raises:
            FileNotFoundError: If the path is not configured.
        """
        value = self.config["paths"].get(name)
        if not value:
            raise FileNotFoundError(
                f"No '{name}' input configured (use --{name.replace('_', '-')})"
            )
        return value

    @property
    def output_dir(self) -> str:
        return ensure_dir(self.config["paths"].get("out") or paths.OUTPUT_DIR)

    def error_file_path(self, task_name: str) -> str:
        """Where a failed task writes its error message and traceback."""
        return paths.error_file_path(
            task_name, ensure_dir(os.path.join(self.output_dir, "errors"))
        )

    @property
    def diff(self) -> Dict[str, Any]:
        return self.config["diff"]

    @property
    def correlations(self) -> Dict[str, Any]:
        return self.config["correlations"]

    @property
    def npmi_min(self) -> float:
        """
        Gets the NPMI threshold.

        Returns:
            float: The explicit threshold, else the preset's one.
        """
        section = self.config["correlations"]
        if section["npmi_min"] is not None:
            return section["npmi_min"]
        return PRESET_NPMI_MIN[CorrelationPreset(section["preset"])]

    @property
    def clustering(self) -> Dict[str, Any]:
        return self.config["clustering"]

    @property
    def retrieval(self) -> Dict[str, Any]:
        return self.config["retrieval"]

    @property
    def relabel(self) -> Dict[str, Any]:
        return self.config["relabel"]

    @property
    def gateway(self) -> Dict[str, Any]:
        return self.config["gateway"]

    @property
    def bench(self) -> Dict[str, Any]:
        return self.config["bench"]

    def to_dict(self) -> dict:
        return copy.deepcopy(self.config)


def deep_merge(base: dict, override: dict) -> dict:
    """Recursively overlays `override` on `base`; None values in override are skipped."""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if value is None:
            continue
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def load_run_config(
    config_file: Optional[str] = None,
    overrides: Optional[dict] = None,
    default_config_path: str = paths.DEFAULT_CONFIG_FILE_PATH,
) -> RunSchema:
    """
    Layers the default configuration, an optional config file and command-line
    overrides (later wins), validates the result and wraps it in a RunSchema.

    Args:
        config_file (str): JSON or YAML config file, optional.
        overrides (dict): Nested overrides from command-line flags.
        default_config_path (str): Path of the shipped defaults.

    Returns:
        RunSchema: The validated run configuration.
    """
    config = read_json_as_dict(default_config_path)
    if config_file:
        config = deep_merge(config, read_json_as_dict(config_file))
    if overrides:
        config = deep_merge(config, overrides)
    return RunSchema(validate_run_config(config))


def module_versions() -> Dict[str, str]:
    return {
        package.__name__: package.__version__ for package in MODULE_PACKAGES
    }


def save_report(
    report: Dict[str, Any],
    file_name: str,
    schema: RunSchema,
    meta: Optional[Dict[str, Any]] = None,
) -> str:
    """
    Writes a report with the resolved configuration and module versions
    embedded. Run timestamps go to a `<report>.meta.json` sidecar so the
    report bytes depend only on the inputs and the configuration.

    Args:
        report (dict): Report body.
        file_name (str): File name inside the output directory.
        schema (RunSchema): The run configuration.
        meta (dict): Extra run metadata for the sidecar (e.g. elapsed time).

    Returns:
        str: Path of the written report.
    """
    file_path = os.path.join(schema.output_dir, file_name)
    body = dict(validate_report(report))
    body["config"] = schema.to_dict()
    body["module_versions"] = module_versions()
    save_json(file_path, body)
    sidecar = {"finished_at": datetime.now(timezone.utc).isoformat()}
    sidecar.update(meta or {})
    save_json(f"{os.path.splitext(file_path)[0]}.meta.json", sidecar)
    return file_path


def load_report(file_path: str) -> Dict[str, Any]:
    return read_json_as_dict(file_path)


def report_inputs(schema: RunSchema, names: List[str]) -> Dict[str, Optional[str]]:
    """Input files a report was computed from, by path key."""
    return {name: schema.path(name) for name in names}
