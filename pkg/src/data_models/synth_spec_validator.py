"""Pydantic models validating synthetic-corpus specifications."""
from typing import Annotated, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from exceptions import InputError


class PlantModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    def planted_latents(self) -> List[int]:
        raise NotImplementedError


def _check_rate(v: Optional[float]) -> Optional[float]:
    if v is not None and not 0 <= v <= 1:
        raise ValueError(f"rates must be in [0, 1]. Given {v}")
    return v


class DiffPlant(PlantModel):
    """Latent active at rate_a in corpus A and rate_b in corpus B."""

    type: Literal["diff"] = "diff"
    latent: int
    rate_a: float
    rate_b: float

    @field_validator("rate_a", "rate_b")
    @classmethod
    def rate_range(cls, v):
        return _check_rate(v)

    def planted_latents(self) -> List[int]:
        return [self.latent]


class PairPlant(PlantModel):
    """
    Latents i and j active together in a joint_rate share of corpus A. Optional
    marginal rates add solo activations; `trivial` puts both on the same token.
    """

    type: Literal["pair"] = "pair"
    i: int
    j: int
    joint_rate: float
    rate_i: Optional[float] = None
    rate_j: Optional[float] = None
    label_sim_target: float = 0.0
    trivial: bool = False

    @field_validator("joint_rate", "rate_i", "rate_j")
    @classmethod
    def rate_range(cls, v):
        return _check_rate(v)

    @field_validator("label_sim_target")
    @classmethod
    def similarity_range(cls, v):
        if not -1 <= v <= 1:
            raise ValueError(f"label_sim_target must be in [-1, 1]. Given {v}")
        return v

    @model_validator(mode="after")
    def joint_within_marginals(self):
        if self.i == self.j:
            raise ValueError("A pair needs two different latents")
        for name in ("rate_i", "rate_j"):
            rate = getattr(self, name)
            if rate is not None and self.joint_rate > rate:
                raise ValueError(f"joint_rate {self.joint_rate} exceeds {name} {rate}")
        return self

    @property
    def marginal_i(self) -> float:
        return self.joint_rate if self.rate_i is None else self.rate_i

    @property
    def marginal_j(self) -> float:
        return self.joint_rate if self.rate_j is None else self.rate_j

    def planted_latents(self) -> List[int]:
        return [self.i, self.j]


class BlocksPlant(PlantModel):
    """
    k blocks of latents_per_block consecutive latents starting at first_latent.
    Each corpus-A document belongs to one block of this axis; its block's
    latents are on and all other block latents off, each bit flipped with
    probability `noise`.
    """

    type: Literal["blocks"] = "blocks"
    k: int
    latents_per_block: int
    first_latent: int
    noise: float = 0.0
    axis: str = "blocks"

    @field_validator("noise")
    @classmethod
    def noise_range(cls, v):
        return _check_rate(v)

    @field_validator("k", "latents_per_block")
    @classmethod
    def positive(cls, v):
        if v < 1:
            raise ValueError(f"must be at least 1. Given {v}")
        return v

    def planted_latents(self) -> List[int]:
        return list(range(self.first_latent, self.first_latent + self.k * self.latents_per_block))

    def block_latents(self, block: int) -> List[int]:
        start = self.first_latent + block * self.latents_per_block
        return list(range(start, start + self.latents_per_block))


class RelevancePlant(PlantModel):
    """Latent active in exactly n_relevant corpus-A documents, which are the relevant ones."""

    type: Literal["relevance"] = "relevance"
    latent: int
    n_relevant: int
    query_id: Optional[str] = None

    @field_validator("n_relevant")
    @classmethod
    def positive(cls, v):
        if v < 1:
            raise ValueError(f"n_relevant must be at least 1. Given {v}")
        return v

    def planted_latents(self) -> List[int]:
        return [self.latent]

    @property
    def resolved_query_id(self) -> str:
        return self.query_id or f"relevance_{self.latent}"


Plant = Annotated[
    Union[DiffPlant, PairPlant, BlocksPlant, RelevancePlant], Field(discriminator="type")
]


class SynthSpec(BaseModel):
    """
    Synthetic corpus specification. Background latents are every latent not
    named by a plant, each active with probability background_rate per document.
    """

    model_config = ConfigDict(extra="forbid")

    n_docs: int
    d_sae: int
    background_rate: float = 0.01
    tokens_per_doc: int = 16
    label_dim: int = 64
    catalog_scope: Literal["all", "planted"] = "all"
    seed: int = 0
    plants: List[Plant] = Field(default_factory=list)

    @field_validator("background_rate")
    @classmethod
    def rate_range(cls, v):
        return _check_rate(v)

    @field_validator("n_docs", "d_sae", "tokens_per_doc", "label_dim")
    @classmethod
    def positive(cls, v):
        if v < 1:
            raise ValueError(f"must be at least 1. Given {v}")
        return v

    @model_validator(mode="after")
    def consistent_plants(self):
        seen = set()
        for plant in self.plants:
            for latent in plant.planted_latents():
                if not 0 <= latent < self.d_sae:
                    raise ValueError(f"Planted latent {latent} outside [0, {self.d_sae})")
                if latent in seen:
                    raise ValueError(f"Latent {latent} is planted twice")
                seen.add(latent)
            if isinstance(plant, PairPlant) and not plant.trivial and self.tokens_per_doc < 4:
                raise ValueError("Non-trivial pairs need at least 4 tokens per document")
            if isinstance(plant, RelevancePlant) and plant.n_relevant > self.n_docs:
                raise ValueError(f"n_relevant {plant.n_relevant} exceeds n_docs {self.n_docs}")
        axes = [p.axis for p in self.plants if isinstance(p, BlocksPlant)]
        if len(axes) != len(set(axes)):
            raise ValueError("Blocks plants need distinct axis names")
        return self

    @property
    def has_second_corpus(self) -> bool:
        return any(isinstance(p, DiffPlant) for p in self.plants)

    def planted_latents(self) -> List[int]:
        return sorted(latent for p in self.plants for latent in p.planted_latents())


def validate_synth_spec(spec_dict: dict) -> SynthSpec:
    """
    Validates a synthetic corpus specification.

    Raises:
        InputError: If the specification is inconsistent.
    """
    try:
        return SynthSpec.model_validate(spec_dict)
    except ValidationError as exc:
        raise InputError(f"Invalid synthetic corpus spec: {exc}") from exc
