"""Annotation task and result models shared by every gateway client."""
import hashlib
import json
import os
from enum import Enum
from functools import lru_cache
from typing import Any, Dict, List, Optional, Union

from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from config import paths


class TaskKind(str, Enum):
    """Enum for the kinds of work the gateway can hand to a provider"""

    RELABEL = "relabel"
    JUDGE = "judge"
    SUMMARIZE = "summarize"
    CLASSIFY_SYNTACTIC = "classify_syntactic"
    ASSIGN_CLUSTER = "assign_cluster"
    EMBED = "embed"
    RERANK = "rerank"


class ProviderKind(str, Enum):
    LIVE = "live"
    MOCK = "mock"
    CACHE = "cache"


DEFAULT_TEMPLATES = {
    TaskKind.RELABEL: "relabel_v1",
    TaskKind.JUDGE: "judge_v1",
    TaskKind.SUMMARIZE: "summarize_hypotheses_v1",
    TaskKind.CLASSIFY_SYNTACTIC: "classify_syntactic_v1",
    TaskKind.ASSIGN_CLUSTER: "assign_cluster_v1",
    TaskKind.EMBED: "embed_v1",
    TaskKind.RERANK: "rerank_v1",
}


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


class AnnotationTask(BaseModel):
    """
    One unit of work for an external model service.

    task_id is the sha256 of (kind, template_id, payload) in canonical JSON,
    so identical tasks share an id, a cache entry and a provider call.
    """

    model_config = ConfigDict(frozen=True)

    kind: TaskKind
    template_id: str
    payload: Dict[str, Any]
    task_id: str = ""

    @model_validator(mode="after")
    def stable_task_id(self):
        expected = task_hash(self.kind, self.template_id, self.payload)
        if self.task_id and self.task_id != expected:
            raise ValueError(
                f"task_id {self.task_id} does not match the task content ({expected})"
            )
        object.__setattr__(self, "task_id", expected)
        return self

    def payload_size(self) -> int:
        return len(canonical_json(self.payload))

    def to_json(self) -> str:
        return canonical_json(self.model_dump(mode="json"))

    @classmethod
    def from_json(cls, text: str) -> "AnnotationTask":
        return cls.model_validate_json(text)


def task_hash(kind: Union[TaskKind, str], template_id: str, payload: Dict) -> str:
    kind = TaskKind(kind).value
    content = canonical_json({"kind": kind, "payload": payload, "template_id": template_id})
    return hashlib.sha256(content.encode("utf-8")).hexdigest()


def make_task(
    kind: TaskKind, payload: Dict[str, Any], template_id: Optional[str] = None
) -> AnnotationTask:
    """Builds a task with the kind's default template unless one is given."""
    kind = TaskKind(kind)
    return AnnotationTask(
        kind=kind,
        template_id=template_id or DEFAULT_TEMPLATES[kind],
        # round-trip through JSON so payload equality matches what the cache stores
        payload=json.loads(canonical_json(payload)),
    )


class AnnotationResult(BaseModel):
    """
    Provider answer to a task. `content` depends on the kind:
    relabel -> {"label"}, judge -> {"answer": "yes"|"no", "reasoning"},
    summarize -> {"text"}, classify_syntactic -> {"class"},
    assign_cluster -> {"cluster"}, embed -> {"vec"}, rerank -> {"latent_ids"}.
    """

    task_id: str
    kind: TaskKind
    content: Dict[str, Any]
    provider: ProviderKind

    @field_validator("content")
    @classmethod
    def non_empty(cls, v):
        if not v:
            raise ValueError("Result content must not be empty")
        return v

    @model_validator(mode="after")
    def kind_constraints(self):
        if self.kind is TaskKind.JUDGE and self.content.get("answer") not in ("yes", "no"):
            raise ValueError("Judge results must answer 'yes' or 'no'")
        if self.kind is TaskKind.EMBED:
            vec = self.content.get("vec") or []
            norm = sum(v * v for v in vec) ** 0.5
            if abs(norm - 1.0) > 1e-6:
                raise ValueError(f"Embed results must be unit vectors, norm={norm}")
        return self

    def with_provider(self, provider: ProviderKind) -> "AnnotationResult":
        return self.model_copy(update={"provider": provider})


def make_judge_task(property_text: str, text: str) -> AnnotationTask:
    """Yes/no check of one property on one document."""
    return make_task(TaskKind.JUDGE, {"property": property_text, "text": text})


def make_embed_task(text: str) -> AnnotationTask:
    return make_task(TaskKind.EMBED, {"text": text})


def judged_yes(results: List[Any]) -> List[bool]:
    """Boolean per judge result; failed slots (exceptions) count as NO."""
    return [
        isinstance(r, AnnotationResult) and r.content.get("answer") == "yes"
        for r in results
    ]


@lru_cache(maxsize=None)
def load_template(template_id: str, templates_dir: str = paths.TEMPLATES_DIR) -> str:
    file_path = os.path.join(templates_dir, f"{template_id}.txt")
    if not os.path.isfile(file_path):
        raise FileNotFoundError(f"No prompt template '{template_id}' in {templates_dir}")
    with open(file_path, "r", encoding="utf-8") as file:
        return file.read()


class _PromptFields(dict):
    def __missing__(self, key):
        return ""


def render_prompt(task: AnnotationTask) -> str:
    """Fills the task's template with its payload; non-string values become JSON."""
    fields = _PromptFields(
        {
            key: value if isinstance(value, str) else json.dumps(value, indent=2)
            for key, value in task.payload.items()
        }
    )
    return load_template(task.template_id).format_map(fields)
