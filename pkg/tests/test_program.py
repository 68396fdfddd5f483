import json

import pytest

from predguide.errors import MalformedBucket, SchemaViolation, UnresolvedObjectRef
from predguide.program import (
    COUNT_EXACT, RELATION, VisualProgram, canonical_bytes, compile_program, from_document, object_bucket_view,
    parse_program, to_document,
)

DOC = {
    "source_prompt": "two dogs left of a red car",
    "objects": [{"object_id": "dog", "label": "dog"}, {"object_id": "car", "label": "car"}],
    "exact_count_constraints": [{"object_id": "dog", "count": 2}],
    "at_least_count_constraints": [{"object_id": "car", "count": 1}],
    "relation_constraints": [{"subject_id": "dog", "relation": "left", "reference_id": "car"}],
    "attribute_constraints": [{"object_id": "car", "attribute": "color", "value": "red"}],
}


def test_compile_assigns_prefixed_ids_in_bucket_order():
    p = compile_program(DOC)
    assert [x.predicate_id for x in p.predicates] == ["cal-0", "cex-0", "rel-0", "att-0"]
    rel = p.predicate("rel-0")
    assert (rel.family, rel.subject, rel.reference, rel.relation_name) == (RELATION, "dog", "car", "left")
    assert p.predicate("cex-0").family == COUNT_EXACT and p.predicate("cex-0").expected_value == 2


def test_compile_collapses_identical_records():
    doc = dict(DOC, relation_constraints=DOC["relation_constraints"] * 3)
    assert len([p for p in compile_program(doc).predicates if p.family == RELATION]) == 1


def test_compile_rejects_dangling_reference_when_strict():
    doc = dict(DOC, exclusion_constraints=[{"object_id": "cat"}])
    with pytest.raises(UnresolvedObjectRef):
        compile_program(doc)
    assert compile_program(doc, strict=False).predicate("exc-0").subject == "cat"


@pytest.mark.parametrize("bad", [
    {"exact_count_constraints": [{"object_id": "dog", "count": -1}]},
    {"exact_count_constraints": [{"object_id": "dog", "count": True}]},
    {"relation_constraints": [{"subject_id": "dog", "reference_id": "car"}]},
    {"objects": [{"label": "dog"}]},
    {"objects": "dog"},
    {"text_constraints": ["hello"]},
])
def test_compile_rejects_malformed_buckets(bad):
    with pytest.raises(MalformedBucket):
        compile_program(dict(DOC, **bad))


def test_canonical_bytes_roundtrip_and_stable_id():
    p = compile_program(DOC)
    data = canonical_bytes(p)
    assert data.endswith(b"\n")
    q = parse_program(data)
    assert q == p
    assert canonical_bytes(q) == data
    assert len(p.program_id) == 16
    assert compile_program(dict(DOC)).program_id == p.program_id
    assert compile_program(dict(DOC, source_prompt="other")).program_id != p.program_id


def test_program_id_mismatch_is_schema_violation():
    doc = to_document(compile_program(DOC))
    doc["program_id"] = "0" * 16
    with pytest.raises(SchemaViolation):
        from_document(doc)


def test_parse_program_errors():
    with pytest.raises(SchemaViolation):
        parse_program(b"{not json")
    doc = to_document(compile_program(DOC))
    doc.pop("program_id")
    doc["predicates"][0]["family"] = "mystery"
    with pytest.raises(SchemaViolation):
        from_document(doc)


def test_bucket_only_document_compiles():
    assert from_document(DOC) == compile_program(DOC)
    with pytest.raises(SchemaViolation):
        from_document({"objects": [{"label": "x"}]})


def test_bucket_view_matches_parser_schema():
    view = object_bucket_view(compile_program(DOC))
    assert view["relation_constraints"] == [{"subject_id": "dog", "relation": "left", "reference_id": "car"}]
    assert view["exact_count_constraints"] == [{"object_id": "dog", "count": 2}]
    json.dumps(view)


def test_program_helpers():
    p = compile_program(dict(DOC, objects=DOC["objects"] + [{"object_id": "cat", "label": "cat"}],
                             exclusion_constraints=[{"object_id": "cat"}]))
    assert p.exclusion_only("cat") and not p.exclusion_only("dog")
    assert [o.object_id for o in p.positive_objects()] == ["dog", "car"]
    assert p.label_of("car") == "car" and p.label_of("zzz") == "zzz" and p.label_of(None) == ""
    assert [x.predicate_id for x in p.count_predicates("dog")] == ["cex-0"]
    assert isinstance(p.program_int, int)
    assert VisualProgram("").program_id == VisualProgram("").program_id
