"""Pydantic models validating one JSONL record of each input file format."""
import math
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from exceptions import FormatError
from utils import read_jsonl


def _check_finite(vec: List[float], what: str) -> List[float]:
    if not all(math.isfinite(v) for v in vec):
        raise ValueError(f"{what} contains non-finite values")
    return vec


class ActivationRecord(BaseModel):
    """
    One document of the activation JSONL format:
    {"id": str, "tokens": [[[latent_id, value], ...], ...]}
    """

    model_config = ConfigDict(extra="forbid")

    id: str
    tokens: List[List[Tuple[int, float]]]

    @field_validator("id")
    @classmethod
    def non_empty_id(cls, v):
        if not v:
            raise ValueError("Document id must not be empty")
        return v

    @field_validator("tokens")
    @classmethod
    def valid_token_entries(cls, tokens):
        for position, entries in enumerate(tokens):
            previous = -1
            for latent_id, value in entries:
                if latent_id < 0:
                    raise ValueError(
                        f"token {position}: negative latent id {latent_id}"
                    )
                if latent_id <= previous:
                    raise ValueError(
                        f"token {position}: latent ids are not strictly increasing"
                    )
                if not math.isfinite(value) or value <= 0:
                    raise ValueError(
                        f"token {position}: latent {latent_id} has non-positive or "
                        f"non-finite value {value}"
                    )
                previous = latent_id
        return tokens


class HiddenStateRecord(BaseModel):
    """One document of hidden states: {"id": str, "hidden": [[float...] per token]}"""

    id: str
    hidden: List[List[float]]

    @field_validator("hidden")
    @classmethod
    def rectangular_and_finite(cls, rows):
        if not rows:
            raise ValueError("A document needs at least one token")
        width = len(rows[0])
        for row in rows:
            if len(row) != width:
                raise ValueError("Hidden-state rows have different widths")
            _check_finite(row, "hidden state")
        return rows


class CorpusRecord(BaseModel):
    """{"id": str, "text": str, "tokens": [str]?}"""

    id: str
    text: str
    tokens: Optional[List[str]] = None


class DenseVectorRecord(BaseModel):
    """{"id": str, "vec": [float...]}"""

    id: str
    vec: List[float]

    @field_validator("vec")
    @classmethod
    def finite_non_zero(cls, vec):
        _check_finite(vec, "vec")
        if not vec or not any(vec):
            raise ValueError("vec must be a non-zero vector")
        return vec


class QueryRecord(BaseModel):
    """{"query_id": str, "text": str, "vec": [float...]?}"""

    query_id: str
    text: str
    vec: Optional[List[float]] = None

    @field_validator("vec")
    @classmethod
    def finite_vec(cls, vec):
        if vec is not None:
            _check_finite(vec, "vec")
        return vec


class JudgmentRecord(BaseModel):
    """{"query_id": str, "doc_id": str, "relevant": 0|1}"""

    query_id: str
    doc_id: str
    relevant: int

    @field_validator("relevant")
    @classmethod
    def binary(cls, v):
        if v not in (0, 1):
            raise ValueError(f"relevant must be 0 or 1, got {v}")
        return v


class KeyphraseRecord(BaseModel):
    """{"text": str, "vec": [float...]?}"""

    text: str
    vec: Optional[List[float]] = None


def validate_records(
    file_path: str, model: type, lenient: bool = False, logger=None
) -> List[BaseModel]:
    """
    Validates every line of a JSONL file against a pydantic model.

    Args:
        file_path (str): The JSONL file.
        model (type): The pydantic model of one record.
        lenient (bool): Skip malformed lines (with a warning) instead of failing.
        logger: Logger used for lenient-mode warnings.

    Returns:
        List[BaseModel]: The validated records in file order.

    Raises:
        FormatError: Naming every malformed line number, unless lenient.
    """
    records, bad_lines = [], []
    for line_number, obj in read_jsonl(file_path):
        if isinstance(obj, Exception):
            bad_lines.append((line_number, str(obj)))
            continue
        try:
            records.append(model.model_validate(obj))
        except ValidationError as exc:
            bad_lines.append((line_number, str(exc.errors()[0]["msg"])))
    if bad_lines:
        numbers = [n for n, _ in bad_lines]
        if not lenient:
            first_line, first_msg = bad_lines[0]
            raise FormatError(
                f"Malformed records in '{file_path}' on lines {numbers}: {first_msg}",
                line=first_line,
            )
        if logger is not None:
            logger.warning(f"Skipped malformed lines {numbers} in '{file_path}'")
    return records
