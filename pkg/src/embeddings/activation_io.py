"""
Readers and writers for token-activation files and the pooled embedding store.

SAEA binary layout (little-endian):
    magic "SAEA", u32 version=1, u32 d_sae, u64 n_docs
    per doc:   u16 id length, UTF-8 id, u32 n_tokens
    per token: u32 n_entries, then n_entries x (u32 latent_id, f32 value)

The embedding store uses the same framing with exactly one token per document
holding the pooled vector. Token indices are implicit (file position).
"""
import os
import struct
from typing import Dict, Iterable, Iterator, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from data_models.record_validator import (
    ActivationRecord,
    CorpusRecord,
    HiddenStateRecord,
    validate_records,
)
from embeddings.embedding_store import (
    DocActivations,
    InvertedIndex,
    SaeEmbedding,
    binarize,
    build_index,
    pool_document,
)
from encoding.sae_encoder import TokenActivationRecord
from exceptions import FormatError
from logger import get_logger
from utils import read_jsonl, write_jsonl

logger = get_logger(task_name=__name__)

ACTIVATIONS_MAGIC = b"SAEA"
ACTIVATIONS_VERSION = 1
_HEADER = struct.Struct("<4sIIQ")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_PAIR = np.dtype([("latent_id", "<u4"), ("value", "<f4")])


def _read_exact(file, n_bytes: int, what: str, ordinal: Optional[int]) -> bytes:
    offset = file.tell()
    chunk = file.read(n_bytes)
    if len(chunk) != n_bytes:
        raise FormatError(
            f"Truncated file while reading {what}", ordinal=ordinal, offset=offset
        )
    return chunk


def _is_saea(path: str) -> bool:
    with open(path, "rb") as file:
        return file.read(4) == ACTIVATIONS_MAGIC


def activation_file_d_sae(path: str) -> Optional[int]:
    """Dictionary size from a SAEA header; None for JSONL files."""
    if os.path.getsize(path) == 0 or not _is_saea(path):
        return None
    with open(path, "rb") as file:
        _, _, d_sae, _ = _HEADER.unpack(_read_exact(file, _HEADER.size, "header", None))
    return int(d_sae)


def _read_saea(path: str) -> Iterator[DocActivations]:
    with open(path, "rb") as file:
        magic, version, d_sae, n_docs = _HEADER.unpack(
            _read_exact(file, _HEADER.size, "header", None)
        )
        if magic != ACTIVATIONS_MAGIC:
            raise FormatError(f"Bad magic {magic!r}", offset=0)
        if version != ACTIVATIONS_VERSION:
            raise FormatError(f"Unsupported activation file version {version}", offset=4)
        for ordinal in range(n_docs):
            doc_offset = file.tell()
            (id_len,) = _U16.unpack(_read_exact(file, _U16.size, "doc id length", ordinal))
            try:
                doc_id = _read_exact(file, id_len, "doc id", ordinal).decode("utf-8")
            except UnicodeDecodeError as exc:
                raise FormatError(
                    "Doc id is not valid UTF-8", ordinal=ordinal, offset=doc_offset
                ) from exc
            (n_tokens,) = _U32.unpack(_read_exact(file, _U32.size, "token count", ordinal))
            tokens = []
            for token_index in range(n_tokens):
                (n_entries,) = _U32.unpack(
                    _read_exact(file, _U32.size, "entry count", ordinal)
                )
                token_offset = file.tell()
                pairs = np.frombuffer(
                    _read_exact(file, n_entries * _PAIR.itemsize, "entries", ordinal),
                    dtype=_PAIR,
                )
                ids = pairs["latent_id"].astype(np.int64)
                values = pairs["value"].astype(np.float64)
                if ids.size and int(ids.max()) >= d_sae:
                    raise FormatError(
                        f"Latent id {int(ids.max())} >= d_sae={d_sae}",
                        ordinal=ordinal,
                        offset=token_offset,
                    )
                try:
                    tokens.append(TokenActivationRecord(token_index, ids, values))
                except ValueError as exc:
                    raise FormatError(
                        str(exc), ordinal=ordinal, offset=token_offset
                    ) from exc
            yield DocActivations(doc_id, tuple(tokens))
        trailing = file.read(1)
        if trailing:
            raise FormatError(
                f"Trailing bytes after {n_docs} documents", offset=file.tell() - 1
            )


def _read_activation_jsonl(path: str) -> Iterator[DocActivations]:
    for line_number, obj in read_jsonl(path):
        if isinstance(obj, Exception):
            raise FormatError(f"Invalid JSON: {obj}", line=line_number)
        try:
            record = ActivationRecord.model_validate(obj)
        except ValueError as exc:
            raise FormatError(
                f"Invalid activation record: {exc}", ordinal=line_number - 1, line=line_number
            ) from exc
        yield DocActivations(
            record.id,
            tuple(
                TokenActivationRecord.from_pairs(position, entries)
                for position, entries in enumerate(record.tokens)
            ),
        )


def ingest_activations(path: str, progress: bool = False) -> Iterator[DocActivations]:
    """
    Streams documents from a SAEA binary or activation JSONL file, in file order.

    Args:
        path (str): Activation file. The format is detected from the magic bytes.
        progress (bool): Show a tqdm progress bar.

    Yields:
        DocActivations: One validated document at a time.

    Raises:
        FormatError: On any format violation, naming the doc ordinal and byte
            offset (or line), and on duplicate doc ids.
    """
    if os.path.getsize(path) == 0:
        return
    reader = _read_saea(path) if _is_saea(path) else _read_activation_jsonl(path)
    seen = set()
    for ordinal, doc in enumerate(tqdm(reader, disable=None if progress else True, desc="ingest")):
        if doc.doc_id in seen:
            raise FormatError(f"Duplicate doc id '{doc.doc_id}'", ordinal=ordinal)
        seen.add(doc.doc_id)
        yield doc


def write_activations(path: str, docs: Iterable[DocActivations], d_sae: int) -> int:
    """
    Writes documents in the SAEA binary format.

    Returns:
        int: Number of documents written.
    """
    n_docs = 0
    with open(path, "wb") as file:
        file.write(_HEADER.pack(ACTIVATIONS_MAGIC, ACTIVATIONS_VERSION, d_sae, 0))
        for doc in docs:
            doc_id = doc.doc_id.encode("utf-8")
            file.write(_U16.pack(len(doc_id)))
            file.write(doc_id)
            file.write(_U32.pack(len(doc.tokens)))
            for token in doc.tokens:
                if len(token) and int(token.latent_ids[-1]) >= d_sae:
                    raise FormatError(
                        f"Latent id {int(token.latent_ids[-1])} >= d_sae={d_sae} "
                        f"in document '{doc.doc_id}'"
                    )
                pairs = np.empty(len(token), dtype=_PAIR)
                pairs["latent_id"] = token.latent_ids
                pairs["value"] = token.values
                file.write(_U32.pack(len(token)))
                file.write(pairs.tobytes())
            n_docs += 1
        file.seek(0)
        file.write(_HEADER.pack(ACTIVATIONS_MAGIC, ACTIVATIONS_VERSION, d_sae, n_docs))
    return n_docs


def write_activations_jsonl(path: str, docs: Iterable[DocActivations]) -> None:
    write_jsonl(
        path,
        (
            {"id": doc.doc_id, "tokens": [token.entries for token in doc.tokens]}
            for doc in docs
        ),
    )


def save_embeddings(path: str, embs: Sequence[SaeEmbedding], d_sae: int) -> int:
    """Writes pooled embeddings as a SAEA file with one token per document."""
    return write_activations(
        path,
        (
            DocActivations(
                e.doc_id, (TokenActivationRecord(0, e.latent_ids, e.values),)
            )
            for e in embs
        ),
        d_sae,
    )


def load_embeddings(path: str, progress: bool = False) -> List[SaeEmbedding]:
    """
    Loads pooled embeddings. Any activation file works: pooling a store file is
    the identity, pooling a token-level file computes the embeddings.
    """
    return [pool_document(doc) for doc in ingest_activations(path, progress=progress)]


def ingest_hidden_states(path: str) -> Iterator[HiddenStateRecord]:
    """Streams validated hidden-state records {"id", "hidden"} from a JSONL file."""
    for line_number, obj in read_jsonl(path):
        if isinstance(obj, Exception):
            raise FormatError(f"Invalid JSON: {obj}", line=line_number)
        try:
            yield HiddenStateRecord.model_validate(obj)
        except ValueError as exc:
            raise FormatError(
                f"Invalid hidden-state record: {exc}", line=line_number
            ) from exc


def load_corpus(path: str, lenient: bool = False) -> Dict[str, CorpusRecord]:
    """Corpus JSONL {"id", "text", "tokens"?} keyed by doc id."""
    records = validate_records(path, CorpusRecord, lenient=lenient, logger=logger)
    return {record.id: record for record in records}


def load_index(path: str, progress: bool = False) -> InvertedIndex:
    """Inverted index of the binarized pooled embeddings of an activation file."""
    return build_index([binarize(e) for e in load_embeddings(path, progress=progress)])
