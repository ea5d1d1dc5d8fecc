import json
import os
import threading
from typing import Dict, Optional

from gateway.tasks import AnnotationResult
from logger import get_logger
from utils import atomic_write_json, ensure_dir

logger = get_logger(task_name=__name__)


class ResponseCache:
    """
    Gateway response cache keyed by task_id only.

    Results are held in memory and, when a directory is given, persisted as one
    JSON record per task (`<task_id>.json`). The directory is append-only:
    an existing record is never rewritten, so caches from several machines can
    be merged by copying files.
    """

    def __init__(self, cache_dir: Optional[str] = None):
        self.cache_dir = ensure_dir(cache_dir) if cache_dir else None
        self._memory: Dict[str, AnnotationResult] = {}
        self._lock = threading.Lock()

    def _record_path(self, task_id: str) -> str:
        return os.path.join(self.cache_dir, f"{task_id}.json")

    def get(self, task_id: str) -> Optional[AnnotationResult]:
        with self._lock:
            if task_id in self._memory:
                return self._memory[task_id]
        if self.cache_dir is None or not os.path.isfile(self._record_path(task_id)):
            return None
        with open(self._record_path(task_id), "r", encoding="utf-8") as file:
            result = AnnotationResult.model_validate(json.load(file))
        with self._lock:
            self._memory[task_id] = result
        return result

    def put(self, result: AnnotationResult) -> None:
        with self._lock:
            self._memory[result.task_id] = result
        if self.cache_dir is None:
            return
        record_path = self._record_path(result.task_id)
        if not os.path.exists(record_path):
            atomic_write_json(record_path, result.model_dump(mode="json"))

    def __contains__(self, task_id: str) -> bool:
        return self.get(task_id) is not None

    def __len__(self) -> int:
        with self._lock:
            in_memory = set(self._memory)
        if self.cache_dir is not None:
            in_memory |= {
                f[: -len(".json")]
                for f in os.listdir(self.cache_dir)
                if f.endswith(".json")
            }
        return len(in_memory)
