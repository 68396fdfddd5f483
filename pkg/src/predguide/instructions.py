"""Edit-instruction templates and human-readable predicate checks."""

from __future__ import annotations

from .program import (
    ATTRIBUTE, COUNT_AT_LEAST, COUNT_EXACT, COUNT_FAMILIES, EXCLUSION, GLOBAL_SCENE, RELATION,
    VISIBLE_TEXT, Predicate, VisualProgram,
)

PRESERVE_ADD = (
    "Use the input image as the foundation and change only what is needed. "
    "Keep the existing subjects, framing, background, and lighting consistent."
)
PRESERVE_REMOVE = (
    "Use the input image as the foundation and change only what is needed. "
    "Preserve the identity, placement, and scale of the remaining subjects, "
    "and keep the framing, background, and lighting consistent."
)
PRESERVE_ATTRIBUTE = (
    "Use the input image as the foundation and change only this target attribute. "
    "Keep the {object}'s identity, placement, background, and lighting consistent."
)
PRESERVE_SCENE = (
    "Do not add, remove, reposition, or redesign the existing subjects. "
    "Use the input image as the foundation and change only what is needed. "
    "Keep the existing subjects' identity, pose, layout, scale, and lighting as consistent as possible."
)

RELATION_PHRASES = {
    "left": "left of",
    "right": "right of",
    "above": "above",
    "below": "below",
    "near": "near",
    "in": "in",
    "inside": "inside",
    "on": "on",
    "overlapping": "overlapping",
    "in_front_of": "in front of",
    "behind": "behind",
}
INVERSE_RELATION = {
    "left": "right", "right": "left", "above": "below", "below": "above", "near": "near",
    "overlapping": "overlapping", "in_front_of": "behind", "behind": "in_front_of",
}


def relation_phrase(pred: Predicate) -> str:
    return RELATION_PHRASES.get(pred.relation_name or "", pred.raw_name or str(pred.relation_name))


def count_requirement(pred: Predicate, program: VisualProgram) -> str:
    label = program.label_of(pred.subject)
    if pred.family == COUNT_EXACT:
        return f"there are exactly {pred.expected_value} {label} in the image"
    if pred.family == COUNT_AT_LEAST:
        return f"there are at least {pred.expected_value} {label} in the image"
    return f"there is no {label} in the image"


def _preserve_others(program: VisualProgram, object_id: str | None) -> str:
    labels = [o.label for o in program.positive_objects() if o.object_id != object_id]
    if not labels:
        return ""
    return f"Preserve all other required objects ({', '.join(labels)}). "


def _placement_clause(program: VisualProgram, object_id: str) -> str:
    label = program.label_of(object_id)
    for p in program.predicates:
        if p.family != RELATION or p.relation_name not in RELATION_PHRASES:
            continue
        if p.subject == object_id:
            return f" Place the added {label} so it is clearly {RELATION_PHRASES[p.relation_name]} the {program.label_of(p.reference)}."
        if p.reference == object_id and p.relation_name in INVERSE_RELATION:
            inverse = RELATION_PHRASES[INVERSE_RELATION[p.relation_name]]
            return f" Place the added {label} so it is clearly {inverse} the {program.label_of(p.subject)}."
    return ""


def add_instruction(pred: Predicate, program: VisualProgram, missing: int) -> str:
    label = program.label_of(pred.subject)
    return (
        f"Add {missing} more {label} so that {count_requirement(pred, program)}."
        f"{_placement_clause(program, pred.subject)} {PRESERVE_ADD}"
    )


def remove_instruction(pred: Predicate, program: VisualProgram) -> str:
    label = program.label_of(pred.subject)
    head = f"Remove only the extra {label}, preferably a secondary or background instance, so that {count_requirement(pred, program)}."
    if pred.family in COUNT_FAMILIES and int(pred.expected_value) >= 1:
        focus = f"Keep one clear {label} unchanged as the main subject and remove a secondary or background duplicate instead."
    else:
        focus = f"Remove every visible {label} and fill its area with plausible background."
    return f"{head} {focus} {_preserve_others(program, pred.subject)}{PRESERVE_REMOVE}"


def attribute_instruction(pred: Predicate, program: VisualProgram) -> str:
    label = program.label_of(pred.subject)
    value = pred.expected_value
    name = pred.attribute_name
    if name in ("color", "material", "shape", "size"):
        head = f"Change the {label} so that it is {value}."
    elif name == "pattern":
        head = f"Change the {label} so that it has a {value} pattern."
    elif name == "action":
        target = f" the {program.label_of(pred.reference)}" if pred.reference else ""
        head = f"Change the {label} so that it is clearly {value}{target}."
    elif name == "pose":
        head = f"Change the {label}'s pose so that it is clearly {value}."
    elif name == "state":
        head = f"Change the {label} so that its visible state clearly reads as {value}."
    else:
        head = f"Change the {label}'s {pred.raw_name or name} so that it is {value}."
    return f"{head} {_preserve_others(program, pred.subject)}{PRESERVE_ATTRIBUTE.format(object=label)}"


def scene_instruction(pred: Predicate) -> str:
    name = pred.attribute_name
    if name in ("scene", "background"):
        head = f"Change only the background and surrounding environment so the overall scene clearly reads as {pred.expected_value}."
    else:
        attr = (pred.raw_name or name or "scene").replace("_", " ")
        head = f"Change only the scene-level {attr} so it clearly reads as {pred.expected_value}."
    return f"{head} {PRESERVE_SCENE}"


# Only used by the edit-only ablation, which must edit failures that have no
# localized template.
def move_instruction(pred: Predicate, program: VisualProgram) -> str:
    return (
        f"Move the {program.label_of(pred.subject)} so it is clearly {relation_phrase(pred)} "
        f"the {program.label_of(pred.reference)}. {PRESERVE_ADD}"
    )


def text_instruction(pred: Predicate) -> str:
    return f'Add the visible text "{pred.expected_value}" clearly in the image. {PRESERVE_ADD}'


def describe_predicate(pred: Predicate, program: VisualProgram) -> str:
    """Short check sentence for auditors and logs."""
    label = program.label_of(pred.subject)
    if pred.family == COUNT_AT_LEAST:
        return f"at least {pred.expected_value} {label}"
    if pred.family == COUNT_EXACT:
        return f"exactly {pred.expected_value} {label}"
    if pred.family == EXCLUSION:
        return f"no {label}"
    if pred.family == RELATION:
        return f"the {label} is {relation_phrase(pred)} the {program.label_of(pred.reference)}"
    if pred.family == ATTRIBUTE:
        if pred.attribute_name == "pattern":
            return f"the {label} has a {pred.expected_value} pattern"
        if pred.attribute_name == "action" and pred.reference:
            return f"the {label} is {pred.expected_value} the {program.label_of(pred.reference)}"
        if pred.attribute_name == OTHER_ATTRIBUTE:
            return f"the {label}'s {pred.raw_name or 'attribute'} is {pred.expected_value}"
        return f"the {label} is {pred.expected_value}"
    if pred.family == GLOBAL_SCENE:
        if pred.attribute_name in ("scene", "background"):
            return f"the scene is {pred.expected_value}"
        return f"the {(pred.raw_name or pred.attribute_name or 'scene').replace('_', ' ')} is {pred.expected_value}"
    if pred.family == VISIBLE_TEXT:
        return f'the visible text "{pred.expected_value}" appears'
    return pred.predicate_id


OTHER_ATTRIBUTE = "other"
