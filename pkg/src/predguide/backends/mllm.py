"""Chat-completions MLLM client for the text and judgment roles.

Every role renders a fixed template, asks for a JSON object, validates the
reply against a strict schema and records token usage. A reply that fails its
schema is retried once; a second failure raises ``BackendFailure``.
"""

from __future__ import annotations

import base64
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol, Sequence

import httpx
import jsonschema

from ..config import EndpointConfig
from ..errors import BackendFailure, SchemaViolation
from ..states import STATES
from . import AuditVerdict, UsageMeter

BUCKET_KEYS = (
    "at_least_count_constraints", "exclusion_constraints", "exact_count_constraints",
    "relation_constraints", "attribute_constraints", "global_scene_constraints", "text_constraints",
)


@dataclass(frozen=True)
class RoleTemplate:
    system: str
    user: str
    schema: Mapping[str, Any]


PARSER_SYSTEM = (
    "You are a visual-program compiler for text-to-image prompts. "
    "Compile the user prompt into a fixed visual program for deterministic visual checks. "
    "Preserve explicit object identity, counts, attributes, including action-related attributes and their "
    "targets, spatial relations, global scene constraints, visible text, and relation direction. "
    "Use supported predicate names only; declare canonical objects once; represent multiplicity through "
    "count constraints rather than per-instance objects unless the prompt explicitly distinguishes instances."
)
REVIEWER_SYSTEM = (
    "You are a reviewer and repairer for a structured visual program that was compiled from a "
    "text-to-image prompt. Treat the normalized candidate as a starting point, not as ground truth. "
    "Check object declarations, object-ID consistency, count attachment, action-related attribute targets, "
    "relation direction, supported predicate names, self-relations, self-targeted action-related attributes, "
    "unsupported type/size attributes, and exclusions that are not explicit absence requests. "
    "If the candidate is already correct, return an equivalent reviewed program; otherwise return a "
    "repaired program."
)
REWRITER_SYSTEM = (
    "You are a prompt rewriter for a text-to-image model. Given one original prompt, return exactly N "
    "rewritten prompts that are more descriptive and visually concrete while preserving the exact meaning. "
    "Preserve every explicit detail including object identity, count, attributes, including action roles, "
    "spatial relations, background, visible text, medium, and style. Do not add new salient objects or "
    "object-level attributes that are not stated or directly implied. Prefer one coherent scene and vary "
    "style, framing, mood, or scene detail across rewrites."
)
AUDITOR_SYSTEM = (
    "You are reviewing one candidate image against a short list of visual checks. "
    "Decide whether every listed check is visually satisfied while the image still matches the original "
    "prompt. Treat the listed checks as the focus, but fail if broader prompt mismatches make the image "
    "clearly wrong. Prefer failure when a listed color, material, pattern, shape, size, action-related "
    "attribute, relation, or visible object is wrong or too unclear to verify confidently."
)
TEXT_SYSTEM = (
    "You check whether a given string is legibly rendered in an image. "
    "Answer satisfied when it is clearly present, violated when it is absent or misspelled, "
    "and uncertain when it cannot be read confidently."
)
CROP_SYSTEM = (
    "You check one object region of an image against a short description of what the object is doing. "
    "Answer satisfied, uncertain, or violated."
)

_STR_LIST = {"type": "array", "items": {"type": "string"}}
_ARRAY_OF_OBJECTS = {"type": "array", "items": {"type": "object"}}
_VERDICT = {
    "type": "object",
    "required": ["state"],
    "properties": {"state": {"enum": list(STATES)}, "reason": {"type": "string"}},
}

ROLES: dict[str, RoleTemplate] = {
    "parser": RoleTemplate(
        PARSER_SYSTEM,
        "Compile the following user prompt into the structured visual program schema. user_prompt: {prompt}.",
        {
            "type": "object",
            "required": ["source_prompt", "objects", *BUCKET_KEYS],
            "properties": {
                "parser_reasoning": {"type": "string"},
                "source_prompt": {"type": "string"},
                "objects": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["object_id", "label"],
                        "properties": {
                            "object_id": {"type": "string"},
                            "label": {"type": "string"},
                            "proposal_text": {"type": ["string", "null"]},
                            "aliases": _STR_LIST,
                            "description": {"type": ["string", "null"]},
                        },
                    },
                },
                **{k: _ARRAY_OF_OBJECTS for k in BUCKET_KEYS},
            },
        },
    ),
    "reviewer": RoleTemplate(
        REVIEWER_SYSTEM,
        "original_prompt: {prompt}\nnormalization_report: {report}\ncandidate_visual_program: {candidate}",
        {
            "type": "object",
            "required": ["approved_candidate", "reviewed_program"],
            "properties": {
                "approved_candidate": {"type": "boolean"},
                "review_reasoning": {"type": "string"},
                "detected_issues": {"type": "array"},
                "reviewed_program": {"type": "object"},
            },
        },
    ),
    "rewriter": RoleTemplate(
        REWRITER_SYSTEM,
        "Original prompt: {prompt}. Return exactly {n} rewritten prompts as JSON with one key named "
        "rewritten_prompts.",
        {
            "type": "object",
            "required": ["rewritten_prompts"],
            "properties": {"rewritten_prompts": _STR_LIST},
        },
    ),
    "auditor": RoleTemplate(
        AUDITOR_SYSTEM,
        "user_prompt: {prompt}\nchecks_to_verify: {checks}",
        {
            "type": "object",
            "required": ["all_checks_passed", "short_reason"],
            "properties": {
                "all_checks_passed": {"type": "boolean"},
                "short_reason": {"type": "string"},
                "check_reasoning": {},
            },
        },
    ),
    "text_verifier": RoleTemplate(TEXT_SYSTEM, "text_to_find: {text}", _VERDICT),
    "crop_verifier": RoleTemplate(CROP_SYSTEM, "region_box: {box}\ndescription: {text}", _VERDICT),
}


@dataclass(frozen=True)
class Reply:
    content: str
    tokens_in: int
    tokens_out: int


class Transport(Protocol):
    def complete(self, role: str, messages: list[dict[str, Any]], images: int) -> Reply: ...


def image_data_url(image: Any) -> str:
    """Encode raw bytes, a file path, or an object with ``data`` as a PNG data URL."""
    data = getattr(image, "data", image)
    if isinstance(data, (str, Path)):
        data = Path(data).read_bytes()
    if not isinstance(data, (bytes, bytearray)):
        raise BackendFailure(f"cannot attach image of type {type(image).__name__}")
    return "data:image/png;base64," + base64.b64encode(bytes(data)).decode("ascii")


class HTTPTransport:
    """OpenAI-compatible ``/chat/completions`` endpoint."""

    def __init__(self, endpoint: EndpointConfig, client: httpx.Client | None = None):
        if not endpoint.mllm_url:
            raise BackendFailure("no MLLM endpoint configured")
        self.endpoint = endpoint
        self.headers = {"Authorization": f"Bearer {endpoint.api_key}"} if endpoint.api_key else {}
        self.client = client or httpx.Client(timeout=endpoint.timeout)

    def complete(self, role: str, messages: list[dict[str, Any]], images: int) -> Reply:
        body = {
            "model": self.endpoint.model,
            "messages": messages,
            "temperature": self.endpoint.temperature,
            "seed": self.endpoint.seed,
            "response_format": {"type": "json_object"},
        }
        url = self.endpoint.mllm_url.rstrip("/") + "/chat/completions"
        try:
            resp = self.client.post(url, json=body, headers=self.headers)
            resp.raise_for_status()
            doc = resp.json()
            content = doc["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise BackendFailure(f"{role}: {exc}") from exc
        usage = doc.get("usage") or {}
        return Reply(content, int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0)))


class ScriptedTransport:
    """Replays canned replies per role; callables receive the rendered messages."""

    def __init__(self, script: Mapping[str, Any]):
        self.script = {k: list(v) if isinstance(v, list) else v for k, v in script.items()}
        self.sent: list[tuple[str, list[dict[str, Any]]]] = []

    def complete(self, role: str, messages: list[dict[str, Any]], images: int) -> Reply:
        self.sent.append((role, messages))
        entry = self.script.get(role)
        if entry is None:
            raise BackendFailure(f"no scripted reply for role {role!r}")
        if isinstance(entry, list):
            if not entry:
                raise BackendFailure(f"scripted replies for {role!r} exhausted")
            reply = entry.pop(0) if len(entry) > 1 else entry[0]
        else:
            reply = entry
        if callable(reply):
            reply = reply(messages)
        content = reply if isinstance(reply, str) else json.dumps(reply, sort_keys=True)
        text_in = " ".join(str(m.get("content")) for m in messages)
        return Reply(content, len(text_in.split()), len(content.split()))


class MLLMClient:
    def __init__(self, transport: Transport, meter: UsageMeter | None = None,
                 few_shots: Sequence[Mapping[str, str]] = ()):
        self.transport = transport
        self.meter = meter or UsageMeter()
        # optional parser few-shot pairs: {"prompt": ..., "program": ...}
        self.few_shots = list(few_shots)

    def _messages(self, role: str, fields: Mapping[str, Any], images: Sequence[Any]) -> list[dict[str, Any]]:
        tmpl = ROLES[role]
        system = tmpl.system
        if role == "parser" and self.few_shots:
            shots = "\n\n".join(f"user_prompt: {s['prompt']}\nprogram: {s['program']}" for s in self.few_shots)
            system = f"{system}\n\nExamples:\n{shots}"
        user_text = tmpl.user.format(**fields)
        if images:
            content: Any = [{"type": "text", "text": user_text}] + [
                {"type": "image_url", "image_url": {"url": image_data_url(img)}} for img in images
            ]
        else:
            content = user_text
        return [{"role": "system", "content": system}, {"role": "user", "content": content}]

    def call(self, role: str, fields: Mapping[str, Any], images: Sequence[Any] = ()) -> dict[str, Any]:
        messages = self._messages(role, fields, images)
        last: Exception | None = None
        for _ in range(2):
            start = time.perf_counter()
            try:
                reply = self.transport.complete(role, messages, len(images))
            except BackendFailure as exc:
                self.meter.record_mllm(role, 0, 0, len(images), ok=False, latency=time.perf_counter() - start)
                last = exc
                continue
            latency = time.perf_counter() - start
            try:
                doc = json.loads(reply.content)
                jsonschema.validate(doc, ROLES[role].schema)
            except (json.JSONDecodeError, jsonschema.ValidationError) as exc:
                self.meter.record_mllm(role, reply.tokens_in, reply.tokens_out, len(images), ok=False,
                                       latency=latency)
                last = SchemaViolation(f"{role}: {exc}")
                continue
            self.meter.record_mllm(role, reply.tokens_in, reply.tokens_out, len(images), latency=latency)
            return doc
        raise BackendFailure(f"{role} failed twice: {last}")

    # -- roles ---------------------------------------------------------------

    def parse(self, prompt: str) -> dict[str, Any]:
        doc = self.call("parser", {"prompt": prompt})
        doc.pop("parser_reasoning", None)
        return doc

    def rewrite(self, prompt: str, n: int) -> list[str]:
        return list(self.call("rewriter", {"prompt": prompt, "n": n})["rewritten_prompts"])

    def review(self, prompt: str, report: Mapping[str, Any], candidate: Mapping[str, Any]) -> dict[str, Any]:
        fields = {"prompt": prompt, "report": json.dumps(report, sort_keys=True),
                  "candidate": json.dumps(candidate, sort_keys=True)}
        return dict(self.call("reviewer", fields)["reviewed_program"])

    def audit(self, image: Any, prompt: str, checks: Sequence[str]) -> AuditVerdict:
        doc = self.call("auditor", {"prompt": prompt, "checks": json.dumps(list(checks))}, [image])
        return AuditVerdict(bool(doc["all_checks_passed"]), (str(doc.get("short_reason", "")),))

    def verify_text(self, image: Any, text: str) -> str:
        return self.call("text_verifier", {"text": json.dumps(text)}, [image])["state"]

    def verify_crop(self, image: Any, box: Any, text: str) -> str:
        return self.call("crop_verifier", {"box": json.dumps([float(v) for v in box]), "text": text}, [image])["state"]


def scripted_client(script: Mapping[str, Any], meter: UsageMeter | None = None) -> MLLMClient:
    return MLLMClient(ScriptedTransport(script), meter)


def load_script(path: str | Path) -> dict[str, Any]:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaViolation(f"script {path}: {exc}") from exc


RoleCall = Callable[..., Any]
