"""Deterministic validation and repair of compiled programs.

Rules run in a fixed order. Changes that only touch serialized metadata are
recorded as nonsemantic notes; changes to typed content are fixes; names
outside the closed vocabularies are warnings. Fixes and warnings gate the one
optional MLLM review pass.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping

from .errors import InvalidReviewedProgram, MalformedBucket, SchemaViolation
from .program import (
    ATTRIBUTE, ATTRIBUTES, COUNT_AT_LEAST, COUNT_EXACT, COUNT_FAMILIES, EXCLUSION, FAMILIES,
    FAMILY_PREFIX, GLOBAL_SCENE, OTHER, RELATION, RELATIONS, SCENE_ATTRIBUTES, ObjectDecl,
    Predicate, VisualProgram, from_document,
)

# rule catalog ---------------------------------------------------------------
DROP_FRAMING_OBJECT = "drop-framing-object"
DEDUPE_PREDICATE = "dedupe-predicate"
CANONICALIZE_DESCRIPTION = "canonicalize-description"
RENUMBER_PREDICATES = "renumber-predicates"
NONSEMANTIC_RULES = (DROP_FRAMING_OBJECT, DEDUPE_PREDICATE, CANONICALIZE_DESCRIPTION, RENUMBER_PREDICATES)

DEDUPE_OBJECT = "dedupe-object"
CLEAN_TEXT = "clean-text"
CANONICALIZE_RELATION = "canonicalize-relation"
CANONICALIZE_ATTRIBUTE = "canonicalize-attribute"
CANONICALIZE_SCENE = "canonicalize-scene"
SELF_RELATION = "self-relation"
SELF_ACTION = "self-action"
DEMOTE_TYPE_ATTRIBUTE = "demote-type-attribute"
DROP_NONCONTRASTIVE_SIZE = "drop-noncontrastive-size"
DROP_COLOR_EXCLUSION = "drop-color-exclusion"
ADD_MISSING_OBJECT = "add-missing-object"
ADD_EXISTENCE = "add-existence"
DROP_REDUNDANT_LOWER_BOUND = "drop-redundant-lower-bound"
DROP_CONFLICTING_EXCLUSION = "drop-conflicting-exclusion"
DROP_DUPLICATE_EXCLUSION_OBJECT = "drop-duplicate-exclusion-object"
FIX_RULES = (
    DEDUPE_OBJECT, CLEAN_TEXT, CANONICALIZE_RELATION, CANONICALIZE_ATTRIBUTE, CANONICALIZE_SCENE,
    SELF_RELATION, SELF_ACTION, DEMOTE_TYPE_ATTRIBUTE, DROP_NONCONTRASTIVE_SIZE,
    DROP_COLOR_EXCLUSION, ADD_MISSING_OBJECT, ADD_EXISTENCE, DROP_REDUNDANT_LOWER_BOUND,
    DROP_CONFLICTING_EXCLUSION, DROP_DUPLICATE_EXCLUSION_OBJECT,
)

UNSUPPORTED_RELATION = "unsupported-relation"
UNSUPPORTED_ATTRIBUTE = "unsupported-attribute"
UNSUPPORTED_SCENE = "unsupported-scene"
WARNING_RULES = (UNSUPPORTED_RELATION, UNSUPPORTED_ATTRIBUTE, UNSUPPORTED_SCENE)

# lexicons -------------------------------------------------------------------
COLOR_WORDS = frozenset({
    "black", "white", "red", "green", "yellow", "blue", "brown", "orange", "pink",
    "purple", "gray", "grey",
})

TYPE_ATTRIBUTE_NAMES = frozenset({
    "type", "kind", "breed", "species", "category", "variety", "model", "brand", "class", "make", "genre",
})

SIZE_COMPARATIVES = frozenset({
    "larger", "smaller", "bigger", "taller", "shorter", "longer", "wider", "narrower",
    "largest", "smallest", "biggest", "tallest", "shortest", "tiniest",
})

_FRAMING = re.compile(
    r"^(?:(?:a|an|the)\s+)?(?:close[\s-]?up|photo(?:graph)?|picture|image|illustration|render(?:ing)?|shot|snapshot)"
    r"(?:\s+of)?$"
)

RELATION_SYNONYMS = {
    "left": "left", "left of": "left", "to the left of": "left", "on the left of": "left",
    "right": "right", "right of": "right", "to the right of": "right", "on the right of": "right",
    "above": "above", "over": "above", "on top": "on", "on top of": "on", "atop": "on",
    "below": "below", "under": "below", "beneath": "below", "underneath": "below",
    "near": "near", "next to": "near", "beside": "near", "by": "near", "close to": "near",
    "nearby": "near", "adjacent to": "near",
    "in": "in", "inside": "inside", "inside of": "inside", "within": "inside",
    "on": "on", "upon": "on", "on surface of": "on",
    "overlapping": "overlapping", "overlaps": "overlapping", "overlap": "overlapping",
    "intersecting": "overlapping", "overlapping with": "overlapping",
    "in front of": "in_front_of", "in front": "in_front_of", "front of": "in_front_of",
    "behind": "behind", "in back of": "behind",
}

ATTRIBUTE_SYNONYMS = {
    **{a: a for a in ATTRIBUTES},
    "colour": "color", "colors": "color", "colour of": "color",
    "materials": "material", "made of": "material", "texture": "material",
    "form": "shape", "patterns": "pattern", "print": "pattern",
    "posture": "pose", "position": "pose", "stance": "pose",
    "condition": "state", "status": "state",
    "activity": "action", "verb": "action", "doing": "action", "behavior": "action", "behaviour": "action",
    "scale": "size", "dimension": "size",
}

SCENE_SYNONYMS = {
    **{s.replace("_", " "): s for s in SCENE_ATTRIBUTES},
    "environment": "scene", "setting": "scene", "location": "scene", "place": "scene",
    "backdrop": "background", "time": "time_of_day", "time of day": "time_of_day",
    "light": "lighting", "art style": "style",
}


def _key(name: str) -> str:
    return " ".join(name.lower().replace("_", " ").replace("-", " ").split())


def canonical_relation(name: str) -> str | None:
    return RELATION_SYNONYMS.get(_key(name))


def canonical_attribute(name: str) -> str | None:
    return ATTRIBUTE_SYNONYMS.get(_key(name))


def canonical_scene(name: str) -> str | None:
    return SCENE_SYNONYMS.get(_key(name))


def _collapse(text: str) -> str:
    return " ".join(text.split())


def is_color_word(label: str) -> bool:
    words = _collapse(label.lower()).split()
    while words and words[0] in ("a", "an", "the", "any"):
        words = words[1:]
    if words and words[-1] in ("color", "colour", "colored", "coloured"):
        words = words[:-1]
    return len(words) == 1 and words[0] in COLOR_WORDS


def is_framing_label(label: str) -> bool:
    return bool(_FRAMING.match(_collapse(label.lower())))


# report ---------------------------------------------------------------------


@dataclass(frozen=True)
class Note:
    rule: str
    ids: tuple[str, ...] = ()
    detail: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {"rule": self.rule, "ids": list(self.ids), "detail": self.detail}


@dataclass
class NormalizationReport:
    nonsemantic_changes: list[Note] = field(default_factory=list)
    fixes: list[Note] = field(default_factory=list)
    warnings: list[Note] = field(default_factory=list)

    def review_required(self) -> bool:
        return bool(self.fixes or self.warnings)

    def fix_rules(self) -> set[str]:
        return {n.rule for n in self.fixes}

    def to_dict(self) -> dict[str, Any]:
        return {
            "nonsemantic_changes": [n.to_dict() for n in self.nonsemantic_changes],
            "fixes": [n.to_dict() for n in self.fixes],
            "warnings": [n.to_dict() for n in self.warnings],
            "review_required": self.review_required(),
        }


def review_gate(report: NormalizationReport) -> bool:
    return report.review_required()


# working state ----------------------------------------------------------------


class _Work:
    def __init__(self, program: VisualProgram):
        self.prompt = program.source_prompt
        self.objects: list[ObjectDecl] = list(program.objects)
        self.preds: list[Predicate] = list(program.predicates)
        self.report = NormalizationReport()

    def note(self, rule: str, ids: Iterable[str | None] = (), detail: str = "") -> None:
        note = Note(rule, tuple(i for i in ids if i is not None), detail)
        if rule in NONSEMANTIC_RULES:
            self.report.nonsemantic_changes.append(note)
        elif rule in FIX_RULES:
            self.report.fixes.append(note)
        else:
            self.report.warnings.append(note)

    def obj(self, object_id: str | None) -> ObjectDecl | None:
        for o in self.objects:
            if o.object_id == object_id:
                return o
        return None

    def referenced(self, object_id: str) -> bool:
        return any(object_id in (p.subject, p.reference) for p in self.preds)

    def exclusion_only(self, object_id: str) -> bool:
        used = [p for p in self.preds if object_id in (p.subject, p.reference)]
        return bool(used) and all(p.family == EXCLUSION for p in used)

    def positive_count(self, object_id: str) -> bool:
        return any(
            p.family in COUNT_FAMILIES and p.subject == object_id and int(p.expected_value or 0) >= 1
            for p in self.preds
        )

    def drop(self, doomed: Iterable[Predicate]) -> None:
        doomed_ids = {id(p) for p in doomed}
        self.preds = [p for p in self.preds if id(p) not in doomed_ids]


# nonsemantic ----------------------------------------------------------------


def _drop_framing_objects(w: _Work) -> None:
    for o in list(w.objects):
        if is_framing_label(o.label):
            w.objects.remove(o)
            gone = [p for p in w.preds if o.object_id in (p.subject, p.reference)]
            w.drop(gone)
            w.note(DROP_FRAMING_OBJECT, [o.object_id, *(p.predicate_id for p in gone)], o.label)


def _dedupe_predicates(w: _Work) -> None:
    seen: dict[tuple, Predicate] = {}
    kept = []
    for p in w.preds:
        if p.identity in seen:
            w.note(DEDUPE_PREDICATE, [p.predicate_id, seen[p.identity].predicate_id])
            continue
        seen[p.identity] = p
        kept.append(p)
    w.preds = kept


def _canonical_description(text: str) -> str:
    return _collapse(text).lower().rstrip(" .")


def _canonicalize_descriptions(w: _Work) -> None:
    for i, p in enumerate(w.preds):
        if p.description is None:
            continue
        if p.family == RELATION or (p.family == ATTRIBUTE and p.attribute_name == "action"):
            new = _canonical_description(p.description) or None
            if new != p.description:
                w.preds[i] = replace(p, description=new)
                w.note(CANONICALIZE_DESCRIPTION, [p.predicate_id])


# fixes ------------------------------------------------------------------------


def _dedupe_objects(w: _Work) -> None:
    seen: set[str] = set()
    kept = []
    for o in w.objects:
        if o.object_id in seen:
            w.note(DEDUPE_OBJECT, [o.object_id], o.label)
            continue
        seen.add(o.object_id)
        kept.append(o)
    w.objects = kept


def _clean_aliases(label: str, aliases: Iterable[str]) -> tuple[str, ...]:
    out: list[str] = []
    seen = {label.lower()}
    for a in aliases:
        a = _collapse(a)
        if a and a.lower() not in seen:
            seen.add(a.lower())
            out.append(a)
    return tuple(out)


def _clean_text(w: _Work) -> None:
    for i, o in enumerate(w.objects):
        label = _collapse(o.label) or o.object_id
        proposal = _collapse(o.proposal_text) if o.proposal_text is not None else None
        new = replace(o, label=label, proposal_text=proposal or None, aliases=_clean_aliases(label, o.aliases))
        if new != o:
            w.objects[i] = new
            w.note(CLEAN_TEXT, [o.object_id])
    for i, p in enumerate(w.preds):
        if isinstance(p.expected_value, str):
            value = _collapse(p.expected_value)
            if value != p.expected_value:
                w.preds[i] = replace(p, expected_value=value)
                w.note(CLEAN_TEXT, [p.predicate_id])


def _canonicalize_names(w: _Work) -> None:
    for i, p in enumerate(w.preds):
        if p.family == RELATION and p.relation_name != OTHER:
            canon = canonical_relation(p.relation_name or "")
            if canon is not None and canon != p.relation_name:
                w.preds[i] = replace(p, relation_name=canon)
                w.note(CANONICALIZE_RELATION, [p.predicate_id], f"{p.relation_name} -> {canon}")
        elif p.family == ATTRIBUTE and p.raw_name is None:
            canon = canonical_attribute(p.attribute_name or "")
            if canon is not None and canon != p.attribute_name:
                w.preds[i] = replace(p, attribute_name=canon)
                w.note(CANONICALIZE_ATTRIBUTE, [p.predicate_id], f"{p.attribute_name} -> {canon}")
        elif p.family == GLOBAL_SCENE and p.attribute_name != OTHER:
            canon = canonical_scene(p.attribute_name or "")
            if canon is not None and canon != p.attribute_name:
                w.preds[i] = replace(p, attribute_name=canon)
                w.note(CANONICALIZE_SCENE, [p.predicate_id], f"{p.attribute_name} -> {canon}")


def _drop_self_references(w: _Work) -> None:
    for p in list(w.preds):
        if p.family == RELATION and p.subject == p.reference:
            w.drop([p])
            w.note(SELF_RELATION, [p.predicate_id])
        elif p.family == ATTRIBUTE and p.attribute_name == "action" and p.reference is not None \
                and p.reference == p.subject:
            w.drop([p])
            w.note(SELF_ACTION, [p.predicate_id])


def _demote_type_attributes(w: _Work) -> None:
    for p in list(w.preds):
        if p.family != ATTRIBUTE or p.raw_name is not None:
            continue
        if _key(p.attribute_name or "") not in TYPE_ATTRIBUTE_NAMES:
            continue
        w.drop([p])
        o = w.obj(p.subject)
        if o is not None and isinstance(p.expected_value, str) and p.expected_value:
            idx = w.objects.index(o)
            w.objects[idx] = replace(o, aliases=_clean_aliases(o.label, [*o.aliases, p.expected_value]))
        w.note(DEMOTE_TYPE_ATTRIBUTE, [p.predicate_id, p.subject], str(p.expected_value))


def is_comparative_size(value: str) -> bool:
    words = _collapse(str(value).lower()).split()
    return "than" in words or any(word in SIZE_COMPARATIVES for word in words)


def _drop_noncontrastive_sizes(w: _Work) -> None:
    sizes = [p for p in w.preds if p.family == ATTRIBUTE and p.attribute_name == "size"]
    doomed = []
    for p in sizes:
        if is_comparative_size(str(p.expected_value)):
            continue
        contrast = any(
            q.subject != p.subject and _key(str(q.expected_value)) != _key(str(p.expected_value))
            for q in sizes
        )
        if not contrast:
            doomed.append(p)
    for p in doomed:
        w.note(DROP_NONCONTRASTIVE_SIZE, [p.predicate_id], str(p.expected_value))
    w.drop(doomed)


def _drop_color_exclusions(w: _Work) -> None:
    for p in list(w.preds):
        if p.family != EXCLUSION:
            continue
        o = w.obj(p.subject)
        if o is None or not is_color_word(o.label):
            continue
        w.drop([p])
        ids = [p.predicate_id]
        if not w.referenced(o.object_id):
            w.objects.remove(o)
            ids.append(o.object_id)
        w.note(DROP_COLOR_EXCLUSION, ids, o.label)


def _label_from_id(object_id: str) -> str:
    label = re.sub(r"^(?:obj|object|o)[_\-]", "", object_id)
    label = _collapse(label.replace("_", " ").replace("-", " "))
    return label or object_id


def _add_missing_objects(w: _Work) -> None:
    for p in w.preds:
        for ref in (p.subject, p.reference):
            if ref is not None and w.obj(ref) is None:
                w.objects.append(ObjectDecl(object_id=ref, label=_label_from_id(ref)))
                w.note(ADD_MISSING_OBJECT, [ref, p.predicate_id])


def _add_existence(w: _Work) -> None:
    for o in w.objects:
        if w.exclusion_only(o.object_id):
            continue
        if any(p.family in COUNT_FAMILIES and p.subject == o.object_id for p in w.preds):
            continue
        w.preds.append(Predicate(predicate_id="", family=COUNT_AT_LEAST, subject=o.object_id, expected_value=1))
        w.note(ADD_EXISTENCE, [o.object_id], o.label)


def _drop_redundant_lower_bounds(w: _Work) -> None:
    exact = {p.subject for p in w.preds if p.family == COUNT_EXACT}
    doomed = [p for p in w.preds if p.family == COUNT_AT_LEAST and p.subject in exact]
    for p in doomed:
        w.note(DROP_REDUNDANT_LOWER_BOUND, [p.predicate_id, p.subject])
    w.drop(doomed)


def _drop_conflicting_exclusions(w: _Work) -> None:
    doomed = [p for p in w.preds if p.family == EXCLUSION and w.positive_count(p.subject)]
    for p in doomed:
        w.note(DROP_CONFLICTING_EXCLUSION, [p.predicate_id, p.subject])
    w.drop(doomed)


def _drop_duplicate_exclusion_objects(w: _Work) -> None:
    required = {
        _key(o.label) for o in w.objects if w.positive_count(o.object_id)
    }
    for o in list(w.objects):
        if w.exclusion_only(o.object_id) and _key(o.label) in required:
            gone = [p for p in w.preds if p.subject == o.object_id]
            w.drop(gone)
            w.objects.remove(o)
            w.note(DROP_DUPLICATE_EXCLUSION_OBJECT, [o.object_id, *(p.predicate_id for p in gone)], o.label)


# warnings ---------------------------------------------------------------------


def _flag_unsupported(w: _Work) -> None:
    for i, p in enumerate(w.preds):
        if p.family == RELATION and p.relation_name not in RELATIONS and p.relation_name != OTHER:
            w.preds[i] = replace(p, relation_name=OTHER, raw_name=p.relation_name)
            w.note(UNSUPPORTED_RELATION, [p.predicate_id], str(p.relation_name))
        elif p.family == ATTRIBUTE and p.raw_name is None and p.attribute_name not in ATTRIBUTES:
            w.preds[i] = replace(p, attribute_name=OTHER, raw_name=p.attribute_name)
            w.note(UNSUPPORTED_ATTRIBUTE, [p.predicate_id], str(p.attribute_name))
        elif p.family == GLOBAL_SCENE and p.attribute_name not in SCENE_ATTRIBUTES and p.attribute_name != OTHER:
            w.preds[i] = replace(p, attribute_name=OTHER, raw_name=p.attribute_name)
            w.note(UNSUPPORTED_SCENE, [p.predicate_id], str(p.attribute_name))


def _renumber(w: _Work) -> None:
    order = {f: i for i, f in enumerate(FAMILIES)}
    ranked = sorted(w.preds, key=lambda p: (order[p.family], p.identity))
    counters = {f: 0 for f in FAMILIES}
    out = []
    for p in ranked:
        pid = f"{FAMILY_PREFIX[p.family]}-{counters[p.family]}"
        counters[p.family] += 1
        out.append(replace(p, predicate_id=pid))
    if [p.predicate_id for p in w.preds] != [p.predicate_id for p in out] or ranked != w.preds:
        w.note(RENUMBER_PREDICATES)
    w.preds = out


_PASSES = (
    _drop_framing_objects,
    _dedupe_predicates,
    _canonicalize_descriptions,
    _dedupe_objects,
    _clean_text,
    _canonicalize_names,
    _drop_self_references,
    _demote_type_attributes,
    _drop_noncontrastive_sizes,
    _drop_color_exclusions,
    _add_missing_objects,
    _add_existence,
    _drop_redundant_lower_bounds,
    _drop_conflicting_exclusions,
    _drop_duplicate_exclusion_objects,
    _flag_unsupported,
    _dedupe_predicates,
    _renumber,
)


def normalize(program: VisualProgram) -> tuple[VisualProgram, NormalizationReport]:
    """Apply every rule in order; never raises on content problems."""
    w = _Work(program)
    for step in _PASSES:
        step(w)
    out = VisualProgram(source_prompt=w.prompt, objects=tuple(w.objects), predicates=tuple(w.preds))
    return out, w.report


def apply_review(
    original: VisualProgram, reviewed: VisualProgram | Mapping[str, Any] | None
) -> tuple[VisualProgram, NormalizationReport]:
    """Normalize the reviewer's program once more.

    Raises InvalidReviewedProgram when the reviewed document cannot be read;
    the caller then keeps ``original``.
    """
    if reviewed is None:
        raise InvalidReviewedProgram("reviewer returned no program")
    if not isinstance(reviewed, VisualProgram):
        try:
            doc = dict(reviewed)
            doc.pop("program_id", None)
            doc.setdefault("source_prompt", original.source_prompt)
            reviewed = from_document(doc, strict=False)
        except (SchemaViolation, MalformedBucket, TypeError, ValueError) as exc:
            raise InvalidReviewedProgram(str(exc)) from exc
    return normalize(reviewed)
