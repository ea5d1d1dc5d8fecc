"""Pydantic validation of reports and exported arrays before they are written."""
from typing import Any, Dict, List, Literal

import pandas as pd
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from exceptions import InputError


class ReportModel(BaseModel):
    model_config = ConfigDict(extra="allow")

    kind: str


class DiffEntryModel(BaseModel):
    model_config = ConfigDict(extra="allow")

    latent_id: int
    freq_target: float
    freq_other: float
    delta: float
    examples: Dict[str, List[str]]

    @model_validator(mode="after")
    def delta_is_difference(self):
        if self.delta != self.freq_target - self.freq_other:
            raise ValueError(f"delta of latent {self.latent_id} is not freq_target - freq_other")
        return self


class DiffReport(ReportModel):
    kind: Literal["diff"]
    target: str
    others: List[str]
    min_delta: float
    entries: List[DiffEntryModel]


class PairModel(BaseModel):
    model_config = ConfigDict(extra="allow")

    i: int
    j: int
    n_i: int
    n_j: int
    n_ij: int
    npmi: float
    co: float

    @model_validator(mode="after")
    def consistent_counts(self):
        if self.n_ij > min(self.n_i, self.n_j):
            raise ValueError(f"n_ij exceeds a marginal for pair ({self.i}, {self.j})")
        if not -1 <= self.npmi <= 1 or not 0 <= self.co <= 1:
            raise ValueError(f"Statistics out of range for pair ({self.i}, {self.j})")
        return self


class CorrelationReport(ReportModel):
    kind: Literal["correlations"]
    thresholds: Dict[str, Any]
    pairs: List[PairModel]


class ClusteringModel(BaseModel):
    model_config = ConfigDict(extra="allow")

    n_clusters: int
    assignment: Dict[str, int]

    @model_validator(mode="after")
    def clusters_in_range(self):
        bad = [d for d, c in self.assignment.items() if not 0 <= c < self.n_clusters]
        if bad:
            raise ValueError(f"Documents assigned outside [0, {self.n_clusters}): {bad[:5]}")
        return self


class ClusteringReport(ReportModel):
    kind: Literal["clustering"]
    params: Dict[str, Any]
    clustering: ClusteringModel


class RankingModel(BaseModel):
    model_config = ConfigDict(extra="allow")

    query_id: str
    ranked_doc_ids: List[str]
    scores: List[float]

    @model_validator(mode="after")
    def scores_non_increasing(self):
        if len(self.scores) != len(self.ranked_doc_ids):
            raise ValueError(f"Ranking '{self.query_id}' has one score per document missing")
        if any(b > a for a, b in zip(self.scores, self.scores[1:])):
            raise ValueError(f"Scores of ranking '{self.query_id}' increase")
        return self


class RetrievalReport(ReportModel):
    kind: Literal["retrieval"]
    rankings: List[RankingModel]


REPORT_MODELS = {
    "diff": DiffReport,
    "correlations": CorrelationReport,
    "clustering": ClusteringReport,
    "retrieval": RetrievalReport,
}


def validate_report(report: Dict[str, Any]) -> Dict[str, Any]:
    """
    Validates a report of any kind; kinds without a dedicated model only need
    their "kind" field.

    Raises:
        InputError: If the report is malformed.
    """
    model = REPORT_MODELS.get(report.get("kind"), ReportModel)
    try:
        model.model_validate(report)
    except ValidationError as exc:
        raise InputError(f"Invalid {report.get('kind')} report: {exc}") from exc
    return report


class ArraysValidator(BaseModel):
    """Verified-NPMI arrays exported next to the correlation report."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    data: pd.DataFrame

    @field_validator("data")
    @classmethod
    def validate_dataframe(cls, data):
        missing = {"group", "i", "j", "npmi"} - set(data.columns)
        if missing:
            raise ValueError(f"Arrays are missing columns {sorted(missing)}")
        if data["npmi"].isna().any():
            raise ValueError("The npmi column contains null values")
        if not data["group"].isin(["surfaced", "random"]).all():
            raise ValueError("group must be 'surfaced' or 'random'")
        return data


def validate_arrays(data: pd.DataFrame) -> pd.DataFrame:
    try:
        ArraysValidator(data=data)
    except ValidationError as exc:
        raise InputError(f"Invalid correlation arrays: {exc}") from exc
    return data
