"""Typed visual programs: object declarations, predicates, compile and canonical form.

A program is compiled once from the parser's constraint buckets and then used
as the fixed acceptance contract for every candidate image.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Any, Iterable, Mapping

from .errors import MalformedBucket, SchemaViolation, UnresolvedObjectRef

FORMAT_TAG = "predguide.visual_program/1"

COUNT_AT_LEAST = "count_at_least"
COUNT_EXACT = "count_exact"
EXCLUSION = "exclusion"
RELATION = "relation"
ATTRIBUTE = "attribute"
GLOBAL_SCENE = "global_scene"
VISIBLE_TEXT = "visible_text"

# Fixed bucket order; also the canonical predicate order.
FAMILIES = (COUNT_AT_LEAST, COUNT_EXACT, EXCLUSION, RELATION, ATTRIBUTE, GLOBAL_SCENE, VISIBLE_TEXT)
COUNT_FAMILIES = (COUNT_AT_LEAST, COUNT_EXACT)

FAMILY_PREFIX = {
    COUNT_AT_LEAST: "cal",
    COUNT_EXACT: "cex",
    EXCLUSION: "exc",
    RELATION: "rel",
    ATTRIBUTE: "att",
    GLOBAL_SCENE: "scn",
    VISIBLE_TEXT: "txt",
}

BUCKETS = {
    COUNT_AT_LEAST: "at_least_count_constraints",
    COUNT_EXACT: "exact_count_constraints",
    EXCLUSION: "exclusion_constraints",
    RELATION: "relation_constraints",
    ATTRIBUTE: "attribute_constraints",
    GLOBAL_SCENE: "global_scene_constraints",
    VISIBLE_TEXT: "text_constraints",
}

RELATIONS = (
    "left", "right", "above", "below", "near", "in", "inside", "on",
    "overlapping", "in_front_of", "behind",
)
ATTRIBUTES = ("color", "material", "shape", "pattern", "size", "pose", "state", "action", "other")
SCENE_ATTRIBUTES = ("scene", "background", "time_of_day", "weather", "lighting", "season", "style")

# Escape value for names outside the closed vocabularies; the raw string is kept in raw_name.
OTHER = "other"


@dataclass(frozen=True)
class ObjectDecl:
    object_id: str
    label: str
    proposal_text: str | None = None
    aliases: tuple[str, ...] = ()
    description: str | None = None

    @property
    def query(self) -> str:
        """Detector query string for this object."""
        return self.proposal_text or self.label

    def to_dict(self) -> dict[str, Any]:
        return {
            "object_id": self.object_id,
            "label": self.label,
            "proposal_text": self.proposal_text,
            "aliases": list(self.aliases),
            "description": self.description,
        }


@dataclass(frozen=True)
class Predicate:
    predicate_id: str
    family: str
    subject: str | None = None
    reference: str | None = None
    relation_name: str | None = None
    attribute_name: str | None = None
    expected_value: int | str | None = None
    raw_name: str | None = None
    description: str | None = None

    @property
    def identity(self) -> tuple:
        """Content key; two predicates with equal identity are duplicates."""
        return (
            self.family, self.subject or "", self.reference or "", self.relation_name or "",
            self.attribute_name or "", str(self.expected_value), self.raw_name or "",
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "predicate_id": self.predicate_id,
            "family": self.family,
            "subject": self.subject,
            "reference": self.reference,
            "relation_name": self.relation_name,
            "attribute_name": self.attribute_name,
            "expected_value": self.expected_value,
            "raw_name": self.raw_name,
            "description": self.description,
        }


@dataclass(frozen=True)
class VisualProgram:
    source_prompt: str
    objects: tuple[ObjectDecl, ...] = ()
    predicates: tuple[Predicate, ...] = ()

    @cached_property
    def program_id(self) -> str:
        body = _dumps(_body(self))
        return hashlib.sha256(body).hexdigest()[:16]

    @property
    def program_int(self) -> int:
        return int(self.program_id, 16)

    def object(self, object_id: str) -> ObjectDecl:
        for obj in self.objects:
            if obj.object_id == object_id:
                return obj
        raise KeyError(object_id)

    def has_object(self, object_id: str | None) -> bool:
        return any(o.object_id == object_id for o in self.objects)

    def predicate(self, predicate_id: str) -> Predicate:
        for p in self.predicates:
            if p.predicate_id == predicate_id:
                return p
        raise KeyError(predicate_id)

    def label_of(self, object_id: str | None) -> str:
        if object_id is None:
            return ""
        try:
            return self.object(object_id).label
        except KeyError:
            return object_id

    def count_predicates(self, object_id: str) -> list[Predicate]:
        return [p for p in self.predicates if p.family in COUNT_FAMILIES and p.subject == object_id]

    def exclusion_only(self, object_id: str) -> bool:
        """True when the object appears only as the subject of exclusions."""
        used = [p for p in self.predicates if object_id in (p.subject, p.reference)]
        return bool(used) and all(p.family == EXCLUSION for p in used)

    def positive_objects(self) -> list[ObjectDecl]:
        return [o for o in self.objects if not self.exclusion_only(o.object_id)]

    def with_predicates(self, predicates: Iterable[Predicate]) -> VisualProgram:
        return replace(self, predicates=tuple(predicates))


def _dumps(doc: Any) -> bytes:
    return json.dumps(doc, sort_keys=True, ensure_ascii=False, separators=(",", ":")).encode("utf-8")


def _bucket_record(p: Predicate) -> dict[str, Any]:
    if p.family in COUNT_FAMILIES:
        return {"object_id": p.subject, "count": p.expected_value}
    if p.family == EXCLUSION:
        return {"object_id": p.subject}
    if p.family == RELATION:
        return {"subject_id": p.subject, "relation": p.raw_name or p.relation_name, "reference_id": p.reference}
    if p.family == ATTRIBUTE:
        return {"object_id": p.subject, "attribute": p.raw_name or p.attribute_name,
                "value": p.expected_value, "target_id": p.reference}
    if p.family == GLOBAL_SCENE:
        return {"attribute": p.raw_name or p.attribute_name, "value": p.expected_value}
    return {"text": p.expected_value, "object_id": p.subject}


def _body(program: VisualProgram) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "format": FORMAT_TAG,
        "source_prompt": program.source_prompt,
        "objects": [o.to_dict() for o in program.objects],
        "predicates": [p.to_dict() for p in program.predicates],
    }
    for family, bucket in BUCKETS.items():
        doc[bucket] = [_bucket_record(p) for p in program.predicates if p.family == family]
    return doc


def canonical_bytes(program: VisualProgram) -> bytes:
    """Key-sorted compact JSON with the program id, newline terminated."""
    doc = _body(program)
    doc["program_id"] = program.program_id
    return _dumps(doc) + b"\n"


def to_document(program: VisualProgram) -> dict[str, Any]:
    return json.loads(canonical_bytes(program))


# ---------------------------------------------------------------------------
# compile


def _require(record: Mapping[str, Any], key: str, bucket: str) -> Any:
    if not isinstance(record, Mapping) or key not in record or record[key] is None:
        raise MalformedBucket(f"{bucket}: record missing required field {key!r}: {record!r}")
    return record[key]


def _count(record: Mapping[str, Any], bucket: str) -> int:
    n = _require(record, "count", bucket)
    if isinstance(n, bool) or not isinstance(n, int) or n < 0:
        raise MalformedBucket(f"{bucket}: count must be a non-negative integer, got {n!r}")
    return n


def _opt_str(value: Any) -> str | None:
    if value is None:
        return None
    return str(value)


def _parse_object(record: Mapping[str, Any]) -> ObjectDecl:
    object_id = str(_require(record, "object_id", "objects"))
    label = str(_require(record, "label", "objects"))
    aliases = record.get("aliases") or []
    if not isinstance(aliases, (list, tuple)):
        raise MalformedBucket(f"objects: aliases must be a list, got {aliases!r}")
    return ObjectDecl(
        object_id=object_id,
        label=label,
        proposal_text=_opt_str(record.get("proposal_text")),
        aliases=tuple(str(a) for a in aliases),
        description=_opt_str(record.get("description")),
    )


def _raw_predicates(family: str, bucket: str, records: list) -> Iterable[dict[str, Any]]:
    for rec in records:
        if not isinstance(rec, Mapping):
            raise MalformedBucket(f"{bucket}: record is not an object: {rec!r}")
        if family in COUNT_FAMILIES:
            yield dict(subject=str(_require(rec, "object_id", bucket)), expected_value=_count(rec, bucket))
        elif family == EXCLUSION:
            yield dict(subject=str(_require(rec, "object_id", bucket)))
        elif family == RELATION:
            yield dict(
                subject=str(_require(rec, "subject_id", bucket)),
                reference=str(_require(rec, "reference_id", bucket)),
                relation_name=str(_require(rec, "relation", bucket)),
                description=_opt_str(rec.get("description")),
            )
        elif family == ATTRIBUTE:
            yield dict(
                subject=str(_require(rec, "object_id", bucket)),
                attribute_name=str(_require(rec, "attribute", bucket)),
                expected_value=str(_require(rec, "value", bucket)),
                reference=_opt_str(rec.get("target_id")),
                description=_opt_str(rec.get("description")),
            )
        elif family == GLOBAL_SCENE:
            yield dict(
                attribute_name=str(rec.get("attribute") or "scene"),
                expected_value=str(_require(rec, "value", bucket)),
                description=_opt_str(rec.get("description")),
            )
        else:
            yield dict(
                expected_value=str(_require(rec, "text", bucket)),
                subject=_opt_str(rec.get("object_id")),
            )


def compile_program(parsed: Mapping[str, Any], *, strict: bool = True) -> VisualProgram:
    """Build a VisualProgram from parser buckets.

    Predicate ids are the family prefix plus a zero-based ordinal, assigned in
    the fixed bucket order. Predicates with identical content are collapsed.
    With ``strict=False`` references to undeclared objects are kept so that
    normalization can insert the missing declarations.
    """
    if not isinstance(parsed, Mapping):
        raise MalformedBucket("parser output must be a mapping")
    objects_raw = parsed.get("objects", [])
    if not isinstance(objects_raw, list):
        raise MalformedBucket("objects must be a list")
    objects = tuple(_parse_object(r) for r in objects_raw)
    declared = {o.object_id for o in objects}

    predicates: list[Predicate] = []
    seen: set[tuple] = set()
    for family in FAMILIES:
        bucket = BUCKETS[family]
        records = parsed.get(bucket, [])
        if records is None:
            records = []
        if not isinstance(records, list):
            raise MalformedBucket(f"{bucket} must be a list")
        ordinal = 0
        for fields in _raw_predicates(family, bucket, records):
            for ref in (fields.get("subject"), fields.get("reference")):
                if strict and ref is not None and ref not in declared:
                    raise UnresolvedObjectRef(f"{bucket}: undeclared object id {ref!r}")
            pred = Predicate(predicate_id="", family=family, **fields)
            if pred.identity in seen:
                continue
            seen.add(pred.identity)
            predicates.append(replace(pred, predicate_id=f"{FAMILY_PREFIX[family]}-{ordinal}"))
            ordinal += 1
    source = parsed.get("source_prompt") or ""
    return VisualProgram(source_prompt=str(source), objects=objects, predicates=tuple(predicates))


# ---------------------------------------------------------------------------
# documents


def _predicate_from_dict(d: Mapping[str, Any]) -> Predicate:
    try:
        family = d["family"]
        pid = d["predicate_id"]
    except (KeyError, TypeError) as exc:
        raise SchemaViolation(f"predicate record missing field: {exc}") from None
    if family not in FAMILIES:
        raise SchemaViolation(f"unknown predicate family {family!r}")
    value = d.get("expected_value")
    if family in COUNT_FAMILIES:
        if isinstance(value, bool) or not isinstance(value, int) or value < 0:
            raise SchemaViolation(f"{pid}: count target must be a non-negative integer")
    elif family == VISIBLE_TEXT and not (isinstance(value, str) and value):
        raise SchemaViolation(f"{pid}: visible text must be a non-empty string")
    if family == RELATION and (d.get("relation_name") is None or d.get("reference") is None):
        raise SchemaViolation(f"{pid}: relation needs relation_name and reference")
    return Predicate(
        predicate_id=str(pid),
        family=family,
        subject=d.get("subject"),
        reference=d.get("reference"),
        relation_name=d.get("relation_name"),
        attribute_name=d.get("attribute_name"),
        expected_value=value,
        raw_name=d.get("raw_name"),
        description=d.get("description"),
    )


def from_document(doc: Mapping[str, Any], *, strict: bool = True) -> VisualProgram:
    """Inverse of canonical_bytes; bucket-only documents are compiled."""
    if not isinstance(doc, Mapping):
        raise SchemaViolation("program document must be an object")
    if "predicates" not in doc:
        try:
            return compile_program(doc, strict=strict)
        except MalformedBucket as exc:
            raise SchemaViolation(str(exc)) from exc
    try:
        objects = tuple(_parse_object(r) for r in doc.get("objects", []))
    except MalformedBucket as exc:
        raise SchemaViolation(str(exc)) from exc
    preds = tuple(_predicate_from_dict(d) for d in doc["predicates"])
    program = VisualProgram(source_prompt=str(doc.get("source_prompt") or ""), objects=objects, predicates=preds)
    check_program(program, strict=strict)
    pid = doc.get("program_id")
    if pid is not None and pid != program.program_id:
        raise SchemaViolation(f"program_id mismatch: file says {pid}, content hashes to {program.program_id}")
    return program


def parse_program(data: bytes | str, *, strict: bool = True) -> VisualProgram:
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SchemaViolation(f"program file is not valid JSON: {exc}") from exc
    return from_document(doc, strict=strict)


def check_program(program: VisualProgram, *, strict: bool = True) -> None:
    """Raise SchemaViolation unless ids are unique and references resolve."""
    ids = [o.object_id for o in program.objects]
    if len(set(ids)) != len(ids):
        raise SchemaViolation("duplicate object ids")
    pids = [p.predicate_id for p in program.predicates]
    if len(set(pids)) != len(pids):
        raise SchemaViolation("duplicate predicate ids")
    if not strict:
        return
    declared = set(ids)
    for p in program.predicates:
        for ref in (p.subject, p.reference):
            if ref is not None and ref not in declared:
                raise SchemaViolation(f"{p.predicate_id}: undeclared object id {ref!r}")


def object_bucket_view(program: VisualProgram) -> dict[str, Any]:
    """The parser-schema view (objects plus buckets) of a program."""
    doc = _body(program)
    doc.pop("predicates")
    doc.pop("format")
    return doc


__all__ = [
    "ObjectDecl", "Predicate", "VisualProgram", "compile_program", "canonical_bytes",
    "parse_program", "from_document", "to_document", "check_program", "FAMILIES",
    "COUNT_FAMILIES", "RELATIONS", "ATTRIBUTES", "SCENE_ATTRIBUTES", "OTHER",
]
