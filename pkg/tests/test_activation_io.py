import json
import struct

import numpy as np
import pytest

from embeddings.activation_io import (
    activation_file_d_sae,
    ingest_activations,
    ingest_hidden_states,
    load_corpus,
    load_embeddings,
    load_index,
    save_embeddings,
    write_activations,
    write_activations_jsonl,
)
from embeddings.embedding_store import pool_corpus
from exceptions import FormatError


def test_saea_round_trip(tmp_path, random_docs):
    docs = random_docs(n_docs=12, d_sae=50)
    path = str(tmp_path / "acts.saea")
    assert write_activations(path, docs, d_sae=50) == 12
    assert list(ingest_activations(path)) == docs
    assert activation_file_d_sae(path) == 50


def test_jsonl_and_saea_agree(tmp_path, random_docs):
    docs = random_docs(n_docs=8, d_sae=30)
    write_activations(str(tmp_path / "a.saea"), docs, d_sae=30)
    write_activations_jsonl(str(tmp_path / "a.jsonl"), docs)
    assert list(ingest_activations(str(tmp_path / "a.jsonl"))) == list(
        ingest_activations(str(tmp_path / "a.saea"))
    )
    assert activation_file_d_sae(str(tmp_path / "a.jsonl")) is None


def test_empty_file_yields_nothing(tmp_path):
    path = tmp_path / "empty.saea"
    path.write_bytes(b"")
    assert list(ingest_activations(str(path))) == []


def test_truncated_saea_names_doc_and_offset(tmp_path, random_docs):
    path = tmp_path / "acts.saea"
    write_activations(str(path), random_docs(n_docs=3), d_sae=50)
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(FormatError, match="doc #2") as info:
        list(ingest_activations(str(path)))
    assert info.value.offset is not None


def test_latent_beyond_d_sae_is_rejected(tmp_path, doc_factory):
    path = tmp_path / "acts.saea"
    # header d_sae is patched below the largest stored id
    write_activations(str(path), [doc_factory("a", [[(9, 1.0)]])], d_sae=10)
    blob = bytearray(path.read_bytes())
    struct.pack_into("<I", blob, 8, 5)
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError, match="d_sae"):
        list(ingest_activations(str(path)))


def test_duplicate_doc_ids_are_rejected(tmp_path, doc_factory):
    path = str(tmp_path / "dupes.saea")
    write_activations(path, [doc_factory("a", [[(1, 1.0)]]), doc_factory("a", [[(2, 1.0)]])], d_sae=4)
    with pytest.raises(FormatError, match="Duplicate"):
        list(ingest_activations(path))


def test_unsorted_jsonl_entries_are_rejected(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps({"id": "a", "tokens": [[[3, 1.0], [1, 1.0]]]}) + "\n")
    with pytest.raises(FormatError, match="line 1"):
        list(ingest_activations(str(path)))


def test_store_round_trip_pools_to_the_same_embeddings(tmp_path, random_docs):
    docs = random_docs(n_docs=15)
    embs = pool_corpus(docs)
    path = str(tmp_path / "embeddings.saea")
    save_embeddings(path, embs, d_sae=50)
    assert load_embeddings(path) == embs
    # a token-level file loads to the same pooled vectors
    write_activations(str(tmp_path / "tokens.saea"), docs, d_sae=50)
    assert load_embeddings(str(tmp_path / "tokens.saea")) == embs


def test_load_index(tmp_path, doc_factory):
    path = str(tmp_path / "acts.saea")
    write_activations(
        path,
        [doc_factory("a", [[(1, 0.5)], [(2, 1.0)]]), doc_factory("b", [[(2, 0.25)]])],
        d_sae=4,
    )
    idx = load_index(path)
    assert idx.doc_ids == ("a", "b")
    np.testing.assert_array_equal(idx.posting(2), [0, 1])


def test_hidden_states_and_corpus(tmp_path):
    hidden = tmp_path / "hidden.jsonl"
    hidden.write_text(json.dumps({"id": "a", "hidden": [[1.0, 2.0], [0.5, -1.0]]}) + "\n")
    records = list(ingest_hidden_states(str(hidden)))
    assert records[0].id == "a"

    corpus = tmp_path / "corpus.jsonl"
    corpus.write_text(
        json.dumps({"id": "a", "text": "hello"}) + "\nnot json\n" + json.dumps({"id": "b", "text": "bye"}) + "\n"
    )
    assert set(load_corpus(str(corpus), lenient=True)) == {"a", "b"}
    with pytest.raises(FormatError, match="line 2"):
        load_corpus(str(corpus), lenient=False)
