import threading
import time

import numpy as np
import pytest
import requests

from data_models.config_validator import ProviderConfig
from exceptions import PayloadTooLargeError, ProviderError, ResponseParseError
from gateway.annotator_gateway import AnnotatorGateway, build_gateway, embed_texts
from gateway.cache import ResponseCache
from gateway.providers import LiveProvider, MockProvider, parse_response
from gateway.tasks import (
    AnnotationTask,
    ProviderKind,
    TaskKind,
    judged_yes,
    make_embed_task,
    make_judge_task,
    make_task,
    render_prompt,
)


class CountingProvider(MockProvider):
    """Mock provider that records calls and the peak number of concurrent calls."""

    def __init__(self, delay_s=0.01):
        super().__init__(embed_dim=8)
        self.delay_s = delay_s
        self.calls = 0
        self.active = 0
        self.peak = 0
        self._lock = threading.Lock()

    def complete(self, task):
        with self._lock:
            self.calls += 1
            self.active += 1
            self.peak = max(self.peak, self.active)
        time.sleep(self.delay_s)
        try:
            return super().complete(task)
        finally:
            with self._lock:
                self.active -= 1


def test_task_id_is_content_hash():
    a = make_judge_task("mentions a dog", "the dog barked")
    b = make_judge_task("mentions a dog", "the dog barked")
    c = make_judge_task("mentions a dog", "the cat meowed")
    assert a.task_id == b.task_id != c.task_id
    assert AnnotationTask.from_json(a.to_json()) == a
    with pytest.raises(ValueError):
        AnnotationTask(kind=TaskKind.JUDGE, template_id="judge_v1", payload={}, task_id="0" * 64)


def test_mock_answers_are_deterministic(mock_gateway):
    task = make_judge_task("is about law", "statute text")
    fresh = AnnotatorGateway(MockProvider(embed_dim=16))
    assert mock_gateway.submit(task).content == fresh.submit(task).content
    expected = "yes" if int(task.task_id[:16], 16) % 2 == 0 else "no"
    assert mock_gateway.submit(task).content["answer"] == expected


def test_mock_embed_is_unit_norm(mock_gateway):
    vecs = embed_texts(mock_gateway, ["alpha", "beta"])
    assert vecs.shape == (2, 16)
    np.testing.assert_allclose(np.linalg.norm(vecs, axis=1), 1.0)


def test_identical_tasks_call_the_provider_once():
    provider = CountingProvider()
    gateway = AnnotatorGateway(provider, max_in_flight=8)
    task = make_embed_task("same text")
    slots = gateway.submit_batch([task] * 20)
    assert provider.calls == 1
    assert all(s.content == slots[0].content for s in slots)


def test_in_flight_cap_is_respected():
    provider = CountingProvider(delay_s=0.02)
    gateway = AnnotatorGateway(provider, max_in_flight=3)
    tasks = [make_embed_task(f"text {n}") for n in range(24)]
    slots = gateway.submit_batch(tasks, max_in_flight=8)
    assert provider.peak <= 3
    assert [s.task_id for s in slots] == [t.task_id for t in tasks]


def test_cache_hit_is_marked(tmp_path):
    task = make_embed_task("cached")
    first = build_gateway(mock=True, cache_dir=str(tmp_path), embed_dim=8)
    original = first.submit(task)
    assert original.provider is ProviderKind.MOCK

    second = build_gateway(mock=True, cache_dir=str(tmp_path), embed_dim=8)
    replay = second.submit(task)
    assert replay.provider is ProviderKind.CACHE
    assert replay.content == original.content
    assert second.provider_calls == 0
    assert task.task_id in ResponseCache(str(tmp_path))


def test_oversized_payload_is_rejected():
    gateway = AnnotatorGateway(MockProvider(), max_payload_chars=50)
    with pytest.raises(PayloadTooLargeError):
        gateway.submit(make_judge_task("p", "x" * 100))


def test_failed_slots_do_not_abort_the_batch():
    gateway = AnnotatorGateway(MockProvider(), max_payload_chars=60)
    slots = gateway.submit_batch([make_judge_task("p", "short"), make_judge_task("p", "y" * 100)])
    assert slots[0].kind is TaskKind.JUDGE
    assert isinstance(slots[1], PayloadTooLargeError)
    assert judged_yes(slots)[1] is False


def test_judge_parsing_uses_the_last_answer_line():
    task = make_judge_task("p", "t")
    assert parse_response(task, "thinking...\nANSWER: NO\nmore\nANSWER: yes")["answer"] == "yes"
    with pytest.raises(ResponseParseError):
        parse_response(task, "I think so")


def test_assignment_parsing_checks_the_range():
    task = make_task(TaskKind.ASSIGN_CLUSTER, {"text": "t", "n_clusters": 3, "labels": []})
    assert parse_response(task, 'sure: {"cluster": 2}') == {"cluster": 2}
    with pytest.raises(ResponseParseError):
        parse_response(task, '{"cluster": 3}')


def test_prompt_rendering_fills_the_template():
    prompt = render_prompt(make_judge_task("mentions rain", "it rained all day"))
    assert "mentions rain" in prompt
    assert "it rained all day" in prompt


class FakeResponse:
    def __init__(self, payload, status=200):
        self.payload = payload
        self.status = status

    def raise_for_status(self):
        if self.status >= 400:
            raise requests.HTTPError(f"status {self.status}")

    def json(self):
        return self.payload


class FakeSession:
    def __init__(self, responses):
        self.responses = list(responses)
        self.bodies = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.bodies.append((url, json, headers))
        return self.responses.pop(0)


@pytest.fixture
def provider_config():
    return ProviderConfig(
        endpoint="http://chat",
        embedding_endpoint="http://embed",
        model="m",
        embedding_model="e",
        api_key_env="TEST_ANNOTATOR_KEY",
        retries=1,
        backoff_s=0.0,
    )


def test_live_provider_retries_then_answers(provider_config, monkeypatch):
    monkeypatch.setenv("TEST_ANNOTATOR_KEY", "secret")
    session = FakeSession(
        [
            FakeResponse({}, status=503),
            FakeResponse({"choices": [{"message": {"content": "ANSWER: YES"}}]}),
        ]
    )
    result = LiveProvider(provider_config, session=session).complete(make_judge_task("p", "t"))
    assert result.content["answer"] == "yes"
    assert result.provider is ProviderKind.LIVE
    assert session.bodies[-1][2]["Authorization"] == "Bearer secret"


def test_live_provider_gives_up_after_retries(provider_config):
    session = FakeSession([FakeResponse({}, status=500)] * 2)
    with pytest.raises(ProviderError):
        LiveProvider(provider_config, session=session).complete(make_judge_task("p", "t"))


def test_live_embeddings_are_normalized(provider_config):
    session = FakeSession([FakeResponse({"data": [{"embedding": [3.0, 4.0]}]})])
    result = LiveProvider(provider_config, session=session).complete(make_embed_task("x"))
    assert result.content["vec"] == pytest.approx([0.6, 0.8])
    assert session.bodies[0][0] == "http://embed"


def test_disk_cache_starts_empty_and_persists(tmp_path):
    task = make_judge_task("mentions snow", "it snowed")
    gateway = build_gateway(mock=True, cache_dir=str(tmp_path), embed_dim=8)
    assert len(gateway.cache) == 0
    gateway.submit(task)
    assert (tmp_path / f"{task.task_id}.json").is_file()

    replay = build_gateway(mock=True, cache_dir=str(tmp_path), embed_dim=8).submit(task)
    assert replay.provider is ProviderKind.CACHE


def test_explicit_empty_cache_is_kept():
    cache = ResponseCache()
    gateway = AnnotatorGateway(MockProvider(), cache=cache)
    assert gateway.cache is cache
    gateway.submit(make_embed_task("kept"))
    assert len(cache) == 1


class BrokenProvider(MockProvider):
    """Mock provider that fails with a plain KeyError on one text."""

    def complete(self, task):
        if task.payload.get("text") == "bad":
            raise KeyError("text")
        return super().complete(task)


def test_unexpected_provider_errors_fill_their_slot_only():
    gateway = AnnotatorGateway(BrokenProvider(embed_dim=8))
    slots = gateway.submit_batch([make_embed_task("good"), make_embed_task("bad")])
    assert slots[0].kind is TaskKind.EMBED
    assert isinstance(slots[1], ProviderError)
    assert slots[1].__cause__.__class__ is KeyError


def test_rerank_without_candidates_is_a_parse_error():
    gateway = AnnotatorGateway(MockProvider())
    good = make_task(
        TaskKind.RERANK, {"query": "q", "candidates": [{"latent_id": 4, "label": "x"}]}
    )
    bad = make_task(TaskKind.RERANK, {"query": "q"})
    slots = gateway.submit_batch([good, bad])
    assert slots[0].content == {"latent_ids": [4]}
    assert isinstance(slots[1], ResponseParseError)


def test_live_chat_content_must_be_text(provider_config):
    session = FakeSession([FakeResponse({"choices": [{"message": {"content": ["ANSWER: YES"]}}]})])
    with pytest.raises(ResponseParseError):
        LiveProvider(provider_config, session=session).complete(make_judge_task("p", "t"))


def test_task_locks_are_released_after_submits():
    gateway = AnnotatorGateway(CountingProvider(delay_s=0.0), max_in_flight=4)
    tasks = [make_embed_task(f"text {n % 5}") for n in range(40)]
    gateway.submit_batch(tasks)
    gateway.submit(make_judge_task("p", "t"))
    assert gateway._key_locks == {}
