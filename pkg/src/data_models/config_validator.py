"""Pydantic models validating the layered run configuration and provider config."""
import os
from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from exceptions import InputError


class StrictModel(BaseModel):
    """Unknown keys are errors, never silently ignored."""

    model_config = ConfigDict(extra="forbid")


class CorrelationPreset(str, Enum):
    """Enum for the NPMI threshold presets"""

    REAL_WORLD = "real_world"
    INJECTION = "injection"


PRESET_NPMI_MIN = {CorrelationPreset.REAL_WORLD: 0.6, CorrelationPreset.INJECTION: 0.8}


class PathsConfig(StrictModel):
    """Input and output locations. Input paths must exist when given."""

    weights: Optional[str] = None
    activations: Optional[str] = None
    hidden_states: Optional[str] = None
    others: List[str] = []
    catalog: Optional[str] = None
    corpus: Optional[str] = None
    queries: Optional[str] = None
    judgments: Optional[str] = None
    dense_vectors: Optional[str] = None
    keyphrases: Optional[str] = None
    rankings: Optional[str] = None
    reports: List[str] = []
    ground_truth: Optional[str] = None
    synth_spec: Optional[str] = None
    out: Optional[str] = None

    @model_validator(mode="after")
    def inputs_exist(self):
        missing = []
        for name in self.model_fields:
            if name == "out":
                continue
            value = getattr(self, name)
            for path in value if isinstance(value, list) else [value]:
                if path is not None and not os.path.exists(path):
                    missing.append(f"{name}={path}")
        if missing:
            raise ValueError(f"Input paths do not exist: {', '.join(missing)}")
        return self


class DiffConfig(StrictModel):
    min_delta: float = 0.03
    top_n: int = 200
    n_examples: int = 2
    query: str = "What are the most significant, interesting differences?"
    token_budget: int = 8000
    max_example_tokens: int = 256
    trend: bool = False
    summarize: bool = False
    n_verify: int = 50

    @field_validator("min_delta")
    @classmethod
    def delta_range(cls, v):
        if not 0 <= v <= 1:
            raise ValueError(f"min_delta must be in [0, 1]. Given {v}")
        return v

    @field_validator("top_n", "n_examples", "token_budget", "max_example_tokens", "n_verify")
    @classmethod
    def non_negative(cls, v):
        if v < 0:
            raise ValueError(f"must be non-negative. Given {v}")
        return v


class CorrelationConfig(StrictModel):
    preset: CorrelationPreset = CorrelationPreset.REAL_WORLD
    npmi_min: Optional[float] = None
    sim_max: float = 0.2
    min_freq: float = 0.002
    trivial_max: float = 0.5
    trivial_sample: int = 50
    n_shards: int = 16
    lenient: bool = False
    exclude_syntactic: bool = False
    verify_sample_size: int = 1000
    n_examples: int = 3
    cross: bool = False
    verify: bool = False
    n_random_pairs: int = 100

    @field_validator("min_freq")
    @classmethod
    def freq_range(cls, v):
        if not 0 <= v < 1:
            raise ValueError(f"min_freq must be in [0, 1). Given {v}")
        return v

    @field_validator("npmi_min")
    @classmethod
    def npmi_range(cls, v):
        if v is not None and not -1 <= v <= 1:
            raise ValueError(f"npmi_min must be in [-1, 1]. Given {v}")
        return v

    @field_validator("trivial_max")
    @classmethod
    def trivial_range(cls, v):
        if not 0 <= v <= 1:
            raise ValueError(f"trivial_max must be in [0, 1]. Given {v}")
        return v

    @field_validator("n_shards", "trivial_sample", "verify_sample_size")
    @classmethod
    def positive(cls, v):
        if v < 1:
            raise ValueError(f"must be at least 1. Given {v}")
        return v

    @property
    def resolved_npmi_min(self) -> float:
        """Explicit npmi_min, else the preset's threshold."""
        return self.npmi_min if self.npmi_min is not None else PRESET_NPMI_MIN[self.preset]


class ClusteringConfig(StrictModel):
    k_clusters: int = 10
    k_latents: int = 100
    knn_k: int = 15
    n_random: int = 100
    n_top_latents: int = 5
    n_central: int = 5
    max_iter: int = 300
    describe: bool = False
    judge_accuracy: bool = False

    @field_validator("k_clusters")
    @classmethod
    def at_least_two(cls, v):
        if v < 2:
            raise ValueError(f"k_clusters must be at least 2. Given {v}")
        return v

    @field_validator(
        "k_latents", "knn_k", "n_random", "n_top_latents", "n_central", "max_iter"
    )
    @classmethod
    def positive(cls, v):
        if v < 1:
            raise ValueError(f"must be at least 1. Given {v}")
        return v


class RetrievalConfig(StrictModel):
    k_candidates: int = 50
    temperature: float = 0.2
    rerank: bool = False
    k_rrf: int = 60
    rbo_p: float = 0.98
    rbo_depth: int = 50
    precision_k: int = 50

    @field_validator("temperature")
    @classmethod
    def positive_temperature(cls, v):
        if v <= 0:
            raise ValueError(f"temperature must be positive. Given {v}")
        return v

    @field_validator("rbo_p")
    @classmethod
    def persistence_range(cls, v):
        if not 0 < v < 1:
            raise ValueError(f"rbo_p must be in (0, 1). Given {v}")
        return v

    @field_validator("k_candidates", "rbo_depth", "precision_k")
    @classmethod
    def positive(cls, v):
        if v < 1:
            raise ValueError(f"must be at least 1. Given {v}")
        return v

    @field_validator("k_rrf")
    @classmethod
    def non_negative(cls, v):
        if v < 0:
            raise ValueError(f"k_rrf must be non-negative. Given {v}")
        return v


class RelabelConfig(StrictModel):
    n_activating: int = 10
    n_non_activating: int = 10
    latent_ids: List[int] = []


class GatewayConfig(StrictModel):
    max_in_flight: int = 4
    max_payload_chars: int = 200_000
    embed_dim: int = 64
    mock_latency_s: float = 0.0
    cache_dir: Optional[str] = None
    provider_config: Optional[str] = None

    @field_validator("max_in_flight", "embed_dim")
    @classmethod
    def positive(cls, v):
        if v < 1:
            raise ValueError(f"must be at least 1. Given {v}")
        return v


class BenchConfig(StrictModel):
    n_docs: int = 10_000
    d_sae: int = 65_536
    mean_active: int = 300
    min_freq: float = 0.002


class RunConfig(StrictModel):
    """
    Complete, validated configuration of one command run. Embedded verbatim in
    every report so a run can be reproduced.
    """

    seed: int = 0
    threads: Optional[int] = None
    strict: bool = True
    mock: bool = True
    paths: PathsConfig = PathsConfig()
    diff: DiffConfig = DiffConfig()
    correlations: CorrelationConfig = CorrelationConfig()
    clustering: ClusteringConfig = ClusteringConfig()
    retrieval: RetrievalConfig = RetrievalConfig()
    relabel: RelabelConfig = RelabelConfig()
    gateway: GatewayConfig = GatewayConfig()
    bench: BenchConfig = BenchConfig()

    @field_validator("threads")
    @classmethod
    def positive_threads(cls, v):
        if v is not None and v < 1:
            raise ValueError(f"threads must be at least 1. Given {v}")
        return v


class ProviderConfig(StrictModel):
    """Live provider settings. `api_key_env` names the env var holding the key."""

    endpoint: str
    embedding_endpoint: str
    model: str
    embedding_model: str
    api_key_env: str
    timeout_s: float = 60
    retries: int = 3
    backoff_s: float = 1.0
    temperature: Optional[float] = None

    @field_validator("retries")
    @classmethod
    def non_negative(cls, v):
        if v < 0:
            raise ValueError(f"retries must be non-negative. Given {v}")
        return v


def validate_run_config(config_dict: dict) -> dict:
    """
    Validate the merged configuration.

    Args:
        config_dict: dict
            configuration as a python dictionary

    Raises:
        InputError: if the configuration is invalid

    Returns:
        dict: validated configuration as a python dictionary
    """
    try:
        return RunConfig.model_validate(config_dict).model_dump(mode="json")
    except ValidationError as exc:
        raise InputError(f"Invalid configuration: {exc}") from exc


def validate_provider_config(config_dict: dict) -> ProviderConfig:
    try:
        return ProviderConfig.model_validate(config_dict)
    except ValidationError as exc:
        raise InputError(f"Invalid provider configuration: {exc}") from exc
