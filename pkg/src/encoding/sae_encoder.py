"""
Sparse autoencoder weights, encoding and decoding of hidden-state vectors.

The weight container is a small binary format: the magic ``SAEW``, a u32 version,
a u32 header length, a UTF-8 JSON header and then the raw little-endian float32
tensors ``w_enc`` (d_sae x d_model), ``b_enc``, ``w_dec`` (d_model x d_sae) and
``b_dec``, in that order.
"""
import json
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np

from exceptions import FormatError, InvalidParameterError
from logger import get_logger

logger = get_logger(task_name=__name__)

WEIGHTS_MAGIC = b"SAEW"
WEIGHTS_VERSION = 1
TENSOR_ORDER = ("w_enc", "b_enc", "w_dec", "b_dec")
_PREAMBLE = struct.Struct("<4sII")
_FLOAT32 = np.dtype("<f4")


class ActivationKind(str, Enum):
    """Enum for the sparsifying nonlinearity of the SAE"""

    RELU = "relu"
    TOPK = "topk"
    BATCHTOPK = "batchtopk"


@dataclass(frozen=True)
class TokenActivationRecord:
    """Sparse latent activations of one token; only strictly positive values are stored."""

    token_index: int
    latent_ids: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        latent_ids = np.asarray(self.latent_ids, dtype=np.int64).reshape(-1)
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.token_index < 0:
            raise InvalidParameterError(
                f"token_index must be non-negative, got {self.token_index}"
            )
        if latent_ids.shape != values.shape:
            raise InvalidParameterError("latent_ids and values differ in length")
        if latent_ids.size:
            if latent_ids[0] < 0:
                raise InvalidParameterError("latent ids must be non-negative")
            if np.any(np.diff(latent_ids) <= 0):
                raise InvalidParameterError(
                    f"latent ids of token {self.token_index} are not strictly increasing"
                )
            if not np.all(np.isfinite(values)) or np.any(values <= 0):
                raise InvalidParameterError(
                    f"token {self.token_index} stores a non-positive or non-finite value"
                )
        object.__setattr__(self, "latent_ids", latent_ids)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_pairs(cls, token_index: int, pairs: Sequence) -> "TokenActivationRecord":
        if len(pairs) == 0:
            return cls(token_index, np.empty(0, np.int64), np.empty(0))
        ids, vals = zip(*pairs)
        return cls(token_index, np.array(ids), np.array(vals))

    @property
    def entries(self) -> List[tuple]:
        return [(int(i), float(v)) for i, v in zip(self.latent_ids, self.values)]

    def __len__(self) -> int:
        return int(self.latent_ids.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TokenActivationRecord):
            return NotImplemented
        return (
            self.token_index == other.token_index
            and np.array_equal(self.latent_ids, other.latent_ids)
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True, eq=False)
class SaeWeights:
    """
    Encoder/decoder matrices and biases of a sparse autoencoder.

    Immutable after construction; arrays are stored read-only so a loaded
    instance can be shared between workers.
    """

    w_enc: np.ndarray
    b_enc: np.ndarray
    w_dec: np.ndarray
    b_dec: np.ndarray
    activation_kind: ActivationKind = ActivationKind.RELU
    k: Optional[int] = None
    d_model: int = field(init=False)
    d_sae: int = field(init=False)

    def __post_init__(self):
        kind = ActivationKind(self.activation_kind)
        object.__setattr__(self, "activation_kind", kind)
        tensors = {}
        for name in TENSOR_ORDER:
            array = np.array(getattr(self, name), dtype=np.float32)
            if not np.all(np.isfinite(array)):
                raise FormatError(f"Tensor '{name}' contains non-finite values")
            array.setflags(write=False)
            tensors[name] = array
            object.__setattr__(self, name, array)

        if tensors["w_enc"].ndim != 2:
            raise FormatError("Tensor 'w_enc' must be a matrix")
        d_sae, d_model = tensors["w_enc"].shape
        expected = {
            "b_enc": (d_sae,),
            "w_dec": (d_model, d_sae),
            "b_dec": (d_model,),
        }
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise FormatError(
                    f"Tensor '{name}' has shape {tensors[name].shape}, expected {shape}"
                )
        if d_model < 1 or d_sae < 1:
            raise FormatError("d_model and d_sae must be positive")
        if kind in (ActivationKind.TOPK, ActivationKind.BATCHTOPK):
            if self.k is None or self.k < 1:
                raise FormatError(f"Activation '{kind.value}' needs a positive k")
        elif self.k is not None:
            object.__setattr__(self, "k", None)
        if d_sae < d_model:
            logger.warning(
                f"Dictionary is not overcomplete: d_sae={d_sae} < d_model={d_model}"
            )
        object.__setattr__(self, "d_model", int(d_model))
        object.__setattr__(self, "d_sae", int(d_sae))

    def header(self) -> dict:
        activation = {"kind": self.activation_kind.value}
        if self.k is not None:
            activation["k"] = int(self.k)
        return {
            "d_model": self.d_model,
            "d_sae": self.d_sae,
            "activation": activation,
            "tensor_order": list(TENSOR_ORDER),
        }


def save_weights(path: str, w: SaeWeights) -> None:
    """
    Write weights in the SAEW container format.

    Args:
        path (str): Destination file.
        w (SaeWeights): Weights to write.
    """
    header = json.dumps(w.header(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as file:
        file.write(_PREAMBLE.pack(WEIGHTS_MAGIC, WEIGHTS_VERSION, len(header)))
        file.write(header)
        for name in TENSOR_ORDER:
            file.write(np.ascontiguousarray(getattr(w, name), dtype=_FLOAT32).tobytes())


def load_weights(path: str) -> SaeWeights:
    """
    Load and validate SAE weights from a SAEW container.

    Args:
        path (str): Path to the weight container.

    Returns:
        SaeWeights: Weights with validated dimensions.

    Raises:
        FormatError: On a malformed header, a tensor length mismatch or
            non-finite values. The message names the offending tensor.
    """
    with open(path, "rb") as file:
        blob = file.read()
    if len(blob) < _PREAMBLE.size:
        raise FormatError("Weight file is shorter than its preamble", offset=0)
    magic, version, header_len = _PREAMBLE.unpack_from(blob, 0)
    if magic != WEIGHTS_MAGIC:
        raise FormatError(f"Bad magic {magic!r}, expected {WEIGHTS_MAGIC!r}", offset=0)
    if version != WEIGHTS_VERSION:
        raise FormatError(f"Unsupported weight container version {version}", offset=4)
    offset = _PREAMBLE.size
    try:
        header = json.loads(blob[offset : offset + header_len].decode("utf-8"))
        d_model = int(header["d_model"])
        d_sae = int(header["d_sae"])
        activation = header.get("activation", {"kind": "relu"})
        kind = ActivationKind(activation["kind"])
        k = activation.get("k")
    except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
        raise FormatError(f"Malformed weight header: {exc}", offset=offset) from exc
    order = header.get("tensor_order", list(TENSOR_ORDER))
    if list(order) != list(TENSOR_ORDER):
        raise FormatError(f"Unsupported tensor order {order}", offset=offset)
    offset += header_len

    shapes = {
        "w_enc": (d_sae, d_model),
        "b_enc": (d_sae,),
        "w_dec": (d_model, d_sae),
        "b_dec": (d_model,),
    }
    tensors = {}
    for name in TENSOR_ORDER:
        n_bytes = int(np.prod(shapes[name])) * _FLOAT32.itemsize
        chunk = blob[offset : offset + n_bytes]
        if len(chunk) != n_bytes:
            raise FormatError(
                f"Tensor '{name}': tensor length mismatch "
                f"({len(chunk)} bytes, expected {n_bytes})",
                offset=offset,
            )
        array = np.frombuffer(chunk, dtype=_FLOAT32).reshape(shapes[name])
        if not np.all(np.isfinite(array)):
            raise FormatError(f"Tensor '{name}' contains non-finite values", offset=offset)
        tensors[name] = array
        offset += n_bytes
    if offset != len(blob):
        raise FormatError(
            f"Tensor length mismatch: {len(blob) - offset} trailing bytes", offset=offset
        )
    return SaeWeights(activation_kind=kind, k=k, **tensors)


def _check_input(x: np.ndarray, w: SaeWeights) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != w.d_model:
        raise InvalidParameterError(
            f"Input has width {x.shape[-1]}, the SAE expects d_model={w.d_model}"
        )
    if not np.all(np.isfinite(x)):
        raise InvalidParameterError("Input contains non-finite values")
    return x


def _sparsify(pre: np.ndarray, w: SaeWeights, token_index: int) -> TokenActivationRecord:
    positive = np.flatnonzero(pre > 0)
    values = pre[positive]
    if w.activation_kind is not ActivationKind.RELU and positive.size > w.k:
        # largest first, lower latent id wins ties
        order = np.lexsort((positive, -values))[: w.k]
        keep = np.sort(order)
        positive, values = positive[keep], values[keep]
    return TokenActivationRecord(token_index, positive, values)


def encode(x: np.ndarray, w: SaeWeights, token_index: int = 0) -> TokenActivationRecord:
    """
    Sparse code sigma(W_enc x + b_enc) of one hidden-state vector.

    relu keeps every positive pre-activation. topk keeps the k largest positive
    pre-activations. batchtopk is applied per token at inference time, the
    batch-coupled threshold only matters during training.

    Args:
        x (np.ndarray): Hidden state of width d_model.
        w (SaeWeights): SAE weights.
        token_index (int): Token position stored on the returned record.

    Returns:
        TokenActivationRecord: The sparse code.
    """
    x = _check_input(x, w)
    if x.ndim != 1:
        raise InvalidParameterError("encode expects a single vector; use encode_batch")
    pre = w.w_enc.astype(np.float64) @ x + w.b_enc
    return _sparsify(pre, w, token_index)


def encode_batch(x: np.ndarray, w: SaeWeights) -> List[TokenActivationRecord]:
    """Encodes the rows of a (n_tokens, d_model) matrix; row i gets token_index i."""
    x = np.atleast_2d(_check_input(x, w))
    pre = x @ w.w_enc.astype(np.float64).T + w.b_enc
    return [_sparsify(row, w, i) for i, row in enumerate(pre)]


def decode(a: TokenActivationRecord, w: SaeWeights) -> np.ndarray:
    """
    Reconstruction W_dec a + b_dec, accumulated over the stored latents only.

    Raises:
        InvalidParameterError: If a latent id is outside [0, d_sae).
    """
    if len(a) and int(a.latent_ids[-1]) >= w.d_sae:
        raise InvalidParameterError(
            f"Latent id {int(a.latent_ids[-1])} out of range for d_sae={w.d_sae}"
        )
    x_hat = w.b_dec.astype(np.float64).copy()
    if len(a):
        x_hat += w.w_dec[:, a.latent_ids].astype(np.float64) @ a.values
    return x_hat


def reconstruction_error(x: np.ndarray, w: SaeWeights) -> float:
    """L2 norm of x - decode(encode(x))."""
    x = _check_input(x, w)
    return float(np.linalg.norm(x - decode(encode(x, w), w)))
