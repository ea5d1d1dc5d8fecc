"""
Single choke-point for external model work: caching, de-duplication, the
payload budget and a hard cap on concurrent provider calls.
"""
import threading
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from typing import Dict, Iterator, List, Optional, Sequence, Union

import numpy as np
from tqdm import tqdm

from config import paths
from data_models.config_validator import ProviderConfig, validate_provider_config
from exceptions import GatewayError, PayloadTooLargeError, ProviderError
from gateway.cache import ResponseCache
from gateway.providers import LiveProvider, MockProvider, Provider
from gateway.tasks import (
    AnnotationResult,
    AnnotationTask,
    ProviderKind,
    make_embed_task,
)
from logger import get_logger
from utils import read_json_as_dict

logger = get_logger(task_name=__name__)

BatchSlot = Union[AnnotationResult, GatewayError]


class AnnotatorGateway:
    """
    Submits annotation tasks to a provider.

    Args:
        provider (Provider): Mock or live provider.
        cache (ResponseCache): Result cache; an in-memory one when omitted.
        max_in_flight (int): Hard cap on outstanding provider calls.
        max_payload_chars (int): Size budget of a task payload in canonical JSON.
    """

    def __init__(
        self,
        provider: Provider,
        cache: Optional[ResponseCache] = None,
        max_in_flight: int = 4,
        max_payload_chars: int = 200_000,
    ):
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be at least 1")
        self.provider = provider
        self.cache = cache if cache is not None else ResponseCache()
        self.max_in_flight = max_in_flight
        self.max_payload_chars = max_payload_chars
        self.provider_calls = 0
        self._in_flight = threading.BoundedSemaphore(max_in_flight)
        # task_id -> [lock, number of submitters holding or waiting on it]
        self._key_locks: Dict[str, list] = {}
        self._registry_lock = threading.Lock()

    @contextmanager
    def _task_lock(self, task_id: str) -> Iterator[None]:
        with self._registry_lock:
            entry = self._key_locks.setdefault(task_id, [threading.Lock(), 0])
            entry[1] += 1
        try:
            with entry[0]:
                yield
        finally:
            with self._registry_lock:
                entry[1] -= 1
                if entry[1] == 0:
                    del self._key_locks[task_id]

    def submit(self, task: AnnotationTask) -> AnnotationResult:
        """
        Answers one task: from the cache when possible, otherwise from the provider.
        The result is cached before it is returned; parse failures are not cached.

        Raises:
            PayloadTooLargeError: If the payload exceeds the size budget.
            ProviderError / ResponseParseError: From the provider.
        """
        size = task.payload_size()
        if size > self.max_payload_chars:
            raise PayloadTooLargeError(
                f"Payload of {size} chars exceeds the budget of {self.max_payload_chars}",
                task.task_id,
            )
        # one provider call per task id, even under concurrent submission
        with self._task_lock(task.task_id):
            cached = self.cache.get(task.task_id)
            if cached is not None:
                return cached.with_provider(ProviderKind.CACHE)
            with self._in_flight:
                with self._registry_lock:
                    self.provider_calls += 1
                try:
                    result = self.provider.complete(task)
                except GatewayError:
                    raise
                except Exception as exc:
                    raise ProviderError(
                        f"Provider failed with {type(exc).__name__}: {exc}", task.task_id
                    ) from exc
            self.cache.put(result)
            return result

    def _submit_slot(self, task: AnnotationTask) -> BatchSlot:
        try:
            return self.submit(task)
        except GatewayError as exc:
            logger.warning(f"Task {task.task_id} failed: {exc}")
            return exc

    def submit_batch(
        self,
        tasks: Sequence[AnnotationTask],
        max_in_flight: Optional[int] = None,
        progress: bool = False,
    ) -> List[BatchSlot]:
        """
        Answers many tasks concurrently.

        Returns:
            One slot per task in input order: the result, or the GatewayError
            that task raised. The batch never aborts as a whole.
        """
        workers = min(max_in_flight or self.max_in_flight, self.max_in_flight)
        if workers < 1:
            raise ValueError("max_in_flight must be at least 1")
        if not tasks:
            return []
        with ThreadPoolExecutor(max_workers=workers) as pool:
            slots = list(
                tqdm(
                    pool.map(self._submit_slot, tasks),
                    total=len(tasks),
                    disable=None if progress else True,
                    desc="annotate",
                )
            )
        return slots


def build_gateway(
    mock: bool,
    provider_config: Optional[ProviderConfig] = None,
    cache_dir: Optional[str] = None,
    max_in_flight: int = 4,
    max_payload_chars: int = 200_000,
    embed_dim: int = 64,
    mock_latency_s: float = 0.0,
) -> AnnotatorGateway:
    """Gateway with the mock provider, or the live one configured by provider_config."""
    if mock:
        provider: Provider = MockProvider(embed_dim=embed_dim, latency_s=mock_latency_s)
    else:
        if provider_config is None:
            raise GatewayError("A provider config is required when not in mock mode")
        provider = LiveProvider(provider_config)
    logger.info(f"Annotator gateway using the {provider.kind.value} provider")
    return AnnotatorGateway(
        provider,
        cache=ResponseCache(cache_dir),
        max_in_flight=max_in_flight,
        max_payload_chars=max_payload_chars,
    )


def gateway_from_config(gateway_config: dict, mock: bool) -> AnnotatorGateway:
    """
    Builds the gateway of a run from its `gateway` config section.

    Args:
        gateway_config (dict): The validated `gateway` section.
        mock (bool): Use the offline mock provider.

    Returns:
        AnnotatorGateway: The configured gateway.
    """
    provider_config = None
    if not mock:
        provider_config = validate_provider_config(
            read_json_as_dict(
                gateway_config.get("provider_config") or paths.PROVIDER_CONFIG_FILE_PATH
            )
        )
    return build_gateway(
        mock=mock,
        provider_config=provider_config,
        cache_dir=gateway_config.get("cache_dir"),
        max_in_flight=gateway_config["max_in_flight"],
        max_payload_chars=gateway_config["max_payload_chars"],
        embed_dim=gateway_config["embed_dim"],
        mock_latency_s=gateway_config["mock_latency_s"],
    )


def embed_texts(gateway: AnnotatorGateway, texts: Sequence[str]) -> np.ndarray:
    """
    Unit vectors of the given texts, one row per text.

    Raises:
        GatewayError: The first failure among the embed tasks.
    """
    slots = gateway.submit_batch([make_embed_task(text) for text in texts])
    for slot in slots:
        if isinstance(slot, Exception):
            raise slot
    return np.array([slot.content["vec"] for slot in slots], dtype=np.float64)
