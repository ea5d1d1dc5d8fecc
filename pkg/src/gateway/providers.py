"""
Providers answer annotation tasks: a deterministic offline mock and a live
HTTP client speaking a chat-completion / embeddings JSON wire format.
"""
import abc
import json
import os
import re
import time
from typing import Any, Dict, Optional

import numpy as np
import requests

from data_models.config_validator import ProviderConfig
from exceptions import ProviderError, ResponseParseError
from gateway.tasks import (
    AnnotationResult,
    AnnotationTask,
    ProviderKind,
    TaskKind,
    render_prompt,
)
from logger import get_logger

logger = get_logger(task_name=__name__)

_ANSWER_LINE = re.compile(r"^\s*ANSWER:\s*(YES|NO)\b", re.IGNORECASE)
_JSON_BLOCK = re.compile(r"(\{.*\}|\[.*\])", re.DOTALL)


class Provider(abc.ABC):
    kind: ProviderKind

    @abc.abstractmethod
    def complete(self, task: AnnotationTask) -> AnnotationResult:
        """Answers one task or raises a GatewayError."""


def _hash_seed(task_id: str) -> int:
    return int(task_id[:16], 16)


class MockProvider(Provider):
    """
    Offline provider whose answers are a pure function of the task id.

    judge -> yes when the task hash is even; embed -> a unit vector drawn from a
    PCG64 stream seeded by the hash; rerank -> the candidates unchanged;
    assign_cluster -> hash modulo the number of clusters.

    Args:
        embed_dim (int): Width of mock embedding vectors.
        latency_s (float): Upper bound of a random per-call sleep, for
            exercising out-of-order completion. Answers never depend on it.
    """

    kind = ProviderKind.MOCK

    def __init__(self, embed_dim: int = 64, latency_s: float = 0.0):
        self.embed_dim = embed_dim
        self.latency_s = latency_s
        self._latency_rng = np.random.default_rng()

    def complete(self, task: AnnotationTask) -> AnnotationResult:
        if self.latency_s > 0:
            time.sleep(float(self._latency_rng.uniform(0, self.latency_s)))
        seed = _hash_seed(task.task_id)
        short = task.task_id[:8]
        payload = task.payload
        if task.kind is TaskKind.JUDGE:
            answer = "yes" if seed % 2 == 0 else "no"
            content = {"answer": answer, "reasoning": f"mock judgment {short}"}
        elif task.kind is TaskKind.EMBED:
            vec = np.random.default_rng(seed).standard_normal(self.embed_dim)
            content = {"vec": (vec / np.linalg.norm(vec)).tolist()}
        elif task.kind is TaskKind.RELABEL:
            content = {"label": f"latent {payload.get('latent_id')} (mock label {short})"}
        elif task.kind is TaskKind.SUMMARIZE:
            content = {"text": f"mock summary {short}"}
        elif task.kind is TaskKind.CLASSIFY_SYNTACTIC:
            content = {"class": "syntactic" if seed % 4 == 0 else "semantic"}
        elif task.kind is TaskKind.ASSIGN_CLUSTER:
            content = {"cluster": seed % max(1, int(payload.get("n_clusters", 1)))}
        elif task.kind is TaskKind.RERANK:
            try:
                content = {"latent_ids": [int(c["latent_id"]) for c in payload["candidates"]]}
            except (KeyError, TypeError, ValueError) as exc:
                raise ResponseParseError("Rerank payload lacks candidates", task.task_id) from exc
        else:
            raise ResponseParseError(f"Unsupported task kind {task.kind}", task.task_id)
        return AnnotationResult(
            task_id=task.task_id, kind=task.kind, content=content, provider=self.kind
        )


def _extract_json(text: str, task_id: str) -> Any:
    match = _JSON_BLOCK.search(text)
    if not match:
        raise ResponseParseError("Provider output contains no JSON", task_id)
    try:
        return json.loads(match.group(1))
    except json.JSONDecodeError as exc:
        raise ResponseParseError(f"Provider output is not valid JSON: {exc}", task_id)


def parse_response(task: AnnotationTask, text: str) -> Dict[str, Any]:
    """
    Turns provider text into result content for the task's kind.

    Raises:
        ResponseParseError: When the text does not have the expected shape,
            e.g. a judge answer without a final ANSWER line.
    """
    task_id = task.task_id
    if task.kind is TaskKind.JUDGE:
        answers = [m.group(1).lower() for m in map(_ANSWER_LINE.match, text.splitlines()) if m]
        if not answers:
            raise ResponseParseError("Judge output lacks an ANSWER line", task_id)
        return {"answer": answers[-1], "reasoning": text.strip()}
    if task.kind is TaskKind.RELABEL:
        parsed = _extract_json(text, task_id)
        if not isinstance(parsed, dict) or not str(parsed.get("label", "")).strip():
            raise ResponseParseError("Relabel output lacks a label", task_id)
        return {"label": str(parsed["label"]).strip()}
    if task.kind is TaskKind.SUMMARIZE:
        if not text.strip():
            raise ResponseParseError("Empty summary", task_id)
        return {"text": text.strip()}
    if task.kind is TaskKind.CLASSIFY_SYNTACTIC:
        parsed = _extract_json(text, task_id)
        label = parsed.get("class") if isinstance(parsed, dict) else None
        if label not in ("syntactic", "semantic"):
            raise ResponseParseError(f"Unknown class {label!r}", task_id)
        return {"class": label}
    if task.kind is TaskKind.ASSIGN_CLUSTER:
        parsed = _extract_json(text, task_id)
        try:
            cluster = int(parsed["cluster"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ResponseParseError("Assignment output lacks a cluster", task_id) from exc
        if not 0 <= cluster < int(task.payload.get("n_clusters", cluster + 1)):
            raise ResponseParseError(f"Cluster {cluster} out of range", task_id)
        return {"cluster": cluster}
    if task.kind is TaskKind.RERANK:
        parsed = _extract_json(text, task_id)
        ids = parsed.get("latent_ids") if isinstance(parsed, dict) else parsed
        if not isinstance(ids, list):
            raise ResponseParseError("Rerank output lacks latent_ids", task_id)
        try:
            return {"latent_ids": [int(i) for i in ids]}
        except (TypeError, ValueError) as exc:
            raise ResponseParseError("Rerank ids are not integers", task_id) from exc
    raise ResponseParseError(f"Kind {task.kind} has no text parser", task_id)


class LiveProvider(Provider):
    """
    HTTP provider. Chat tasks POST {"model", "messages", "temperature"?} to
    `endpoint` and read choices[0].message.content; embed tasks POST
    {"model", "input"} to `embedding_endpoint` and read data[0].embedding.
    The API key is read from the env var named in the config and never logged.
    """

    kind = ProviderKind.LIVE

    def __init__(self, config: ProviderConfig, session: Optional[requests.Session] = None):
        self.config = config
        self.session = session or requests.Session()

    def _headers(self) -> Dict[str, str]:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.config.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        return headers

    def _post(self, url: str, body: Dict[str, Any], task_id: str) -> Dict[str, Any]:
        last_error = None
        for attempt in range(self.config.retries + 1):
            try:
                response = self.session.post(
                    url, json=body, headers=self._headers(), timeout=self.config.timeout_s
                )
                response.raise_for_status()
                return response.json()
            except (requests.RequestException, ValueError) as exc:
                last_error = exc
                logger.warning(
                    f"Provider call failed (attempt {attempt + 1}/"
                    f"{self.config.retries + 1}) for task {task_id}: {type(exc).__name__}"
                )
                if attempt < self.config.retries:
                    time.sleep(self.config.backoff_s * 2**attempt)
        raise ProviderError(f"Provider request failed: {last_error}", task_id)

    def complete(self, task: AnnotationTask) -> AnnotationResult:
        if task.kind is TaskKind.EMBED:
            body = {"model": self.config.embedding_model, "input": render_prompt(task)}
            response = self._post(self.config.embedding_endpoint, body, task.task_id)
            try:
                vec = np.asarray(response["data"][0]["embedding"], dtype=np.float64)
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise ResponseParseError("Embedding response lacks a vector", task.task_id) from exc
            norm = np.linalg.norm(vec)
            if not np.isfinite(norm) or norm == 0:
                raise ResponseParseError("Embedding vector has zero norm", task.task_id)
            content = {"vec": (vec / norm).tolist()}
        else:
            body = {
                "model": self.config.model,
                "messages": [{"role": "user", "content": render_prompt(task)}],
            }
            if self.config.temperature is not None:
                body["temperature"] = self.config.temperature
            response = self._post(self.config.endpoint, body, task.task_id)
            try:
                text = response["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError) as exc:
                raise ResponseParseError("Chat response lacks message content", task.task_id) from exc
            if text is not None and not isinstance(text, str):
                raise ResponseParseError("Chat message content is not text", task.task_id)
            content = parse_response(task, text or "")
        return AnnotationResult(
            task_id=task.task_id, kind=task.kind, content=content, provider=self.kind
        )
