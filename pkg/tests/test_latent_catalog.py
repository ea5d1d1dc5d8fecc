import json

import numpy as np
import pytest

from catalog.latent_catalog import (
    LatentCatalog,
    LatentCatalogEntry,
    Provenance,
    apply_relabels,
    load_catalog,
    make_relabel_task,
    render_exhibit,
    sample_relabel_docs,
    save_catalog,
)
from data_models.record_validator import CorpusRecord
from exceptions import InputError, InvalidParameterError
from gateway.tasks import TaskKind


def unit(*values):
    vec = np.asarray(values, dtype=float)
    return (vec / np.linalg.norm(vec)).tolist()


@pytest.fixture
def catalog():
    return LatentCatalog(
        [
            LatentCatalogEntry(latent_id=0, label="negation", label_vec=unit(1, 0, 0)),
            LatentCatalogEntry(latent_id=3, label="legal text", label_vec=unit(1, 1, 0)),
            LatentCatalogEntry(latent_id=5, label="sports", label_vec=unit(0, 0, 1)),
            LatentCatalogEntry(latent_id=8, label="no vector"),
        ]
    )


def test_top_k_is_exact_cosine_order(catalog):
    ranked = catalog.top_k_latents([2, 0, 0], k=3)
    assert [i for i, _ in ranked] == [0, 3, 5]
    assert ranked[0][1] == pytest.approx(1.0)
    assert ranked[1][1] == pytest.approx(np.sqrt(0.5))


def test_top_k_beyond_size_ranks_every_vector(catalog):
    assert len(catalog.top_k_latents([0, 0, 1], k=100)) == 3


def test_top_k_ties_break_by_lower_id():
    cat = LatentCatalog(
        [
            LatentCatalogEntry(latent_id=9, label="b", label_vec=unit(1, 0)),
            LatentCatalogEntry(latent_id=2, label="a", label_vec=unit(1, 0)),
        ]
    )
    assert [i for i, _ in cat.top_k_latents([1, 0], k=2)] == [2, 9]


def test_top_k_rejects_bad_queries(catalog):
    with pytest.raises(InvalidParameterError):
        catalog.top_k_latents([0, 0, 0], k=1)
    with pytest.raises(InvalidParameterError):
        catalog.top_k_latents([1, 0], k=1)
    with pytest.raises(InvalidParameterError):
        catalog.top_k_latents([1, 0, 0], k=0)


def test_label_similarity_needs_vectors(catalog):
    assert catalog.label_similarity(0, 5) == pytest.approx(0.0)
    with pytest.raises(InputError):
        catalog.label_similarity(0, 8)
    assert catalog.label(8) == "no vector"
    assert catalog.label(42) is None


def test_union_of_keyphrase_latents(catalog):
    assert catalog.union_keyphrase_latents([[1, 0, 0], [0, 0, 1]], k=1) == {0, 5}


def test_label_vectors_must_be_unit_norm():
    with pytest.raises(ValueError):
        LatentCatalogEntry(latent_id=1, label="x", label_vec=[2.0, 0.0])


def test_load_keeps_last_duplicate_and_round_trips(tmp_path, catalog):
    path = tmp_path / "catalog.jsonl"
    save_catalog(str(path), catalog)
    with open(path, "a") as file:
        file.write(json.dumps({"latent_id": 8, "label": "replaced"}) + "\n")
    loaded = load_catalog(str(path))
    assert loaded.label(8) == "replaced"
    assert loaded.label(3) == "legal text"
    assert len(loaded) == 4


def test_exhibit_marks_activating_tokens(doc_factory):
    doc = doc_factory("d", [[(1, 1.0)], [], [(1, 0.5), (2, 1.0)]])
    corpus = {"d": CorpusRecord(id="d", text="a b c", tokens=["a", "b", "c"])}
    assert render_exhibit("d", 1, corpus, doc=doc) == "<<a>> b <<c>>"
    plain = {"d": CorpusRecord(id="d", text="a b c")}
    assert render_exhibit("d", 2, plain, doc=doc) == "a b c\n(active on tokens [2])"


def test_relabel_task_checks_its_exhibits(doc_factory):
    on = doc_factory("on", [[(4, 1.0)]])
    off = doc_factory("off", [[(2, 1.0)]])
    task = make_relabel_task(4, [on], [off])
    assert task.kind is TaskKind.RELABEL
    assert task.payload["latent_id"] == 4
    with pytest.raises(InvalidParameterError):
        make_relabel_task(4, [off], [on])


def test_sampling_is_seeded(random_docs):
    docs = random_docs(n_docs=40, d_sae=10)
    first = sample_relabel_docs(3, docs, 5, 5, seed=7)
    assert first == sample_relabel_docs(3, docs, 5, 5, seed=7)
    assert all(d.token_positions(3).size for d in first[0])
    assert not any(d.token_positions(3).size for d in first[1])


def test_apply_relabels_skips_failures(catalog, mock_gateway, doc_factory):
    on = doc_factory("on", [[(3, 1.0)]])
    result = mock_gateway.submit(make_relabel_task(3, [on], []))
    updated = apply_relabels(catalog, [3, 5], [result, InputError("failed")])
    assert updated.entries[3].provenance is Provenance.RELABELED
    assert updated.label(3).startswith("latent 3 (mock label")
    assert not updated.has_vector(3)
    assert updated.entries[5] == catalog.entries[5]
