import numpy as np
import pytest

from analysis.diffing import (
    DiffEntry,
    diff_one_vs_rest,
    diff_pair,
    export_hypothesis_bundle,
    make_verify_tasks,
    monotonic_trend_latents,
    top_diff_latents,
    verified_frequency_difference,
    with_labels,
)
from catalog.latent_catalog import LatentCatalog, LatentCatalogEntry
from data_models.record_validator import CorpusRecord
from exceptions import EmptyCorpusError, InvalidParameterError
from gateway.tasks import TaskKind


def corpus_with(index_factory, prefix, n_docs, active):
    """n_docs documents; active maps latent id -> number of leading docs activating it."""
    sets = [[i for i, count in sorted(active.items()) if n < count] for n in range(n_docs)]
    return index_factory(sets, prefix=prefix)


def test_pair_delta_is_exact_difference(index_factory):
    a = corpus_with(index_factory, "a", 10, {7: 5})
    b = corpus_with(index_factory, "b", 10, {7: 2})
    (entry,) = diff_pair(a, b, min_delta=0.03)
    assert entry.freq_target == 0.5
    assert entry.freq_other == 0.2
    assert entry.delta == entry.freq_target - entry.freq_other
    assert entry.delta == pytest.approx(0.3)


def test_one_vs_rest_uses_the_max_other(index_factory):
    target = corpus_with(index_factory, "t", 10, {1: 5})
    low = corpus_with(index_factory, "low", 10, {1: 1})
    high = corpus_with(index_factory, "high", 10, {1: 3})
    (entry,) = diff_one_vs_rest(target, [low, high], min_delta=0.03)
    assert entry.freq_other == 0.3
    assert entry.delta == pytest.approx(0.2)
    # non-activating examples come from the corpus that set freq_other
    assert entry.non_activating_doc_ids == ("high3", "high4")
    assert entry.activating_doc_ids == ("t0", "t1")


def test_threshold_is_on_absolute_delta(index_factory):
    target = corpus_with(index_factory, "t", 100, {1: 50, 2: 10, 3: 21})
    other = corpus_with(index_factory, "o", 100, {1: 10, 2: 50, 3: 20})
    entries = diff_pair(target, other, min_delta=0.03)
    assert [e.latent_id for e in entries] == [1, 2]
    assert entries[1].delta == pytest.approx(-0.4)


def test_latents_absent_from_one_side_count_as_zero(index_factory):
    target = corpus_with(index_factory, "t", 4, {9: 2})
    other = corpus_with(index_factory, "o", 4, {8: 4})
    by_id = {e.latent_id: e for e in diff_pair(target, other)}
    assert by_id[9].freq_other == 0.0
    assert by_id[8].freq_target == 0.0
    assert by_id[8].activating_doc_ids == ()


def test_ranking_and_top_n_ties_by_id():
    entries = [DiffEntry(i, 0.5, 0.2, 0.3) for i in (9, 3, 5)] + [DiffEntry(1, 0.9, 0.0, 0.9)]
    assert [e.latent_id for e in top_diff_latents(entries, n=3)] == [1, 3, 5]
    assert top_diff_latents(entries, n=0) == []
    with pytest.raises(InvalidParameterError):
        top_diff_latents(entries, n=-1)


def test_empty_corpora_are_rejected(index_factory):
    with pytest.raises(EmptyCorpusError):
        diff_pair(index_factory([]), index_factory([[1]]))
    with pytest.raises(InvalidParameterError):
        diff_one_vs_rest(index_factory([[1]]), [])


def test_identical_corpora_have_no_entries(index_factory):
    idx = corpus_with(index_factory, "x", 10, {1: 5, 2: 3})
    assert diff_pair(idx, idx) == []


def test_entry_serialization_and_labels():
    catalog = LatentCatalog([LatentCatalogEntry(latent_id=4, label="dates")])
    entry = DiffEntry(4, 0.5, 0.25, 0.25, ("a",), ("b",))
    (labeled,) = with_labels([entry], catalog)
    data = labeled.to_dict()
    assert data["label"] == "dates"
    assert data["examples"] == {"activating": ["a"], "non_activating": ["b"]}
    assert "label" not in entry.to_dict()


def test_bundle_respects_labels_examples_and_budget():
    catalog = LatentCatalog(
        [LatentCatalogEntry(latent_id=i, label=f"label {i}") for i in (1, 2, 3)]
    )
    corpus = {
        doc_id: CorpusRecord(id=doc_id, text=" ".join(["word"] * 10))
        for doc_id in ("p", "n")
    }
    entries = [
        DiffEntry(1, 0.6, 0.1, 0.5, ("p",), ("n",)),
        DiffEntry(2, 0.5, 0.1, 0.4, ("p",), ()),
        DiffEntry(9, 0.5, 0.1, 0.4, ("p",), ("n",)),
        DiffEntry(3, 0.3, 0.1, 0.2, ("p",), ("n",)),
    ]
    task, skipped = export_hypothesis_bundle(entries, catalog, corpus, "what changed?", token_budget=25)
    assert task.kind is TaskKind.SUMMARIZE
    assert skipped == [2, 9]
    # one exhibit costs 10 + 10 + 2 tokens; the second would exceed the budget
    assert [e["latent_id"] for e in task.payload["exhibits"]] == [1]
    assert task.payload["query"] == "what changed?"


def test_monotonic_trends(index_factory):
    gens = [
        corpus_with(index_factory, "g0", 10, {1: 1, 2: 5, 3: 2}),
        corpus_with(index_factory, "g1", 10, {1: 3, 2: 2, 3: 2}),
        corpus_with(index_factory, "g2", 10, {1: 6, 2: 8, 3: 2}),
    ]
    trends = monotonic_trend_latents(gens, min_delta=0.03)
    assert [t.latent_id for t in trends] == [1]
    assert trends[0].frequencies == (0.1, 0.3, 0.6)
    assert trends[0].rise == pytest.approx(0.5)
    with pytest.raises(InvalidParameterError):
        monotonic_trend_latents(gens[:1])


def test_verified_difference():
    assert verified_frequency_difference([True, True, False, False], [True, False, False, False, False]) == pytest.approx(0.3)
    with pytest.raises(InvalidParameterError):
        verified_frequency_difference([], [True])
    tasks = make_verify_tasks("mentions money", ["a", "b", "a"])
    assert len(tasks) == 3 and tasks[0].task_id == tasks[2].task_id
    assert np.all([t.kind is TaskKind.JUDGE for t in tasks])


def test_delta_exactly_at_threshold_is_kept(index_factory):
    target = corpus_with(index_factory, "t", 100, {1: 35})
    other = corpus_with(index_factory, "o", 100, {1: 32})
    (entry,) = diff_pair(target, other, min_delta=0.03)
    assert entry.latent_id == 1
    assert entry.delta == pytest.approx(0.03)


def test_trend_rise_exactly_at_threshold_is_kept(index_factory):
    gens = [
        corpus_with(index_factory, "g0", 100, {1: 32}),
        corpus_with(index_factory, "g1", 100, {1: 35}),
    ]
    assert [t.latent_id for t in monotonic_trend_latents(gens, min_delta=0.03)] == [1]


def random_corpus(index_factory, rng, prefix, n_docs=60, d_sae=30):
    rates = rng.uniform(0, 0.5, size=d_sae)
    sets = [np.flatnonzero(rng.random(d_sae) < rates) for _ in range(n_docs)]
    return index_factory(sets, prefix=prefix)


@pytest.mark.parametrize("seed", range(200))
def test_diff_is_antisymmetric(index_factory, seed):
    rng = np.random.default_rng(seed)
    a = random_corpus(index_factory, rng, "a")
    b = random_corpus(index_factory, rng, "b")
    forward = {e.latent_id: e.delta for e in diff_pair(a, b, min_delta=0.05)}
    backward = {e.latent_id: e.delta for e in diff_pair(b, a, min_delta=0.05)}
    assert forward.keys() == backward.keys()
    for latent_id, delta in forward.items():
        assert backward[latent_id] == -delta


@pytest.mark.parametrize("seed", range(200))
def test_raising_min_delta_only_removes_entries(index_factory, seed):
    rng = np.random.default_rng(100 + seed)
    a = random_corpus(index_factory, rng, "a")
    b = random_corpus(index_factory, rng, "b")
    previous = None
    for min_delta in (0.0, 0.02, 0.05, 0.1, 0.2, 0.4):
        kept = {e.latent_id for e in diff_pair(a, b, min_delta=min_delta)}
        if previous is not None:
            assert kept <= previous
        previous = kept
