import base64
import json

import httpx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from predguide.backends import Usage, UsageMeter
from predguide.backends.http import ImageRef, ImageService, http_suite
from predguide.backends.language import SyntheticLanguage, generate_suite, parse_prompt, rewrite_prompt
from predguide.backends.mllm import HTTPTransport, MLLMClient, ROLES, load_script, scripted_client
from predguide.backends.offline import OfflineEvidence
from predguide.backends.synthetic import SyntheticWorld, parse_instruction
from predguide.config import EndpointConfig, NoiseConfig
from predguide.controller import Action, build_edit_instruction
from predguide.errors import BackendFailure, MalformedInput, SchemaViolation, UnparseableInstruction
from predguide.evidence import Region, mask_to_rle, rasterize_box
from predguide.instructions import describe_predicate
from predguide.normalize import normalize
from predguide.program import BUCKETS, compile_program
from predguide.states import SATISFIED, UNCERTAIN, VIOLATED
from predguide.verifier import PredicateVerifier


def program_for(prompt):
    return normalize(compile_program(parse_prompt(prompt), strict=False))[0]


# -- prompt language -----------------------------------------------------------


def test_parse_prompt_buckets():
    doc = parse_prompt('two red dogs; a cat; the dog is to the left of the cat; no birds; in a forest; '
                       'the cat is sitting; with the text "OPEN"')
    labels = {o["object_id"]: o["label"] for o in doc["objects"]}
    assert set(labels.values()) == {"dog", "cat", "bird"}
    assert doc["exact_count_constraints"] == [{"object_id": "o1", "count": 2}]
    assert doc["at_least_count_constraints"] == [{"object_id": "o2", "count": 1}]
    assert doc["relation_constraints"][0]["relation"] == "left"
    assert {a["attribute"] for a in doc["attribute_constraints"]} == {"color", "pose"}
    assert doc["global_scene_constraints"] == [{"attribute": "scene", "value": "forest"}]
    assert doc["text_constraints"][0]["text"] == "OPEN"
    with pytest.raises(MalformedInput):
        parse_prompt("purple monkey dishwasher!!")
    with pytest.raises(MalformedInput):
        parse_prompt("  ")


def test_rewrites_preserve_meaning():
    prompt = "two red dogs; a cat; in a forest"
    rewrites = rewrite_prompt(prompt, 8)
    assert len(rewrites) == 8 and prompt not in rewrites and len(set(rewrites)) == 8

    def meaning(text):
        prog = program_for(text)
        label = {o.object_id: o.label for o in prog.objects}
        return {(p.family, label.get(p.subject), label.get(p.reference), p.attribute_name, p.relation_name,
                 str(p.expected_value)) for p in prog.predicates}

    base = meaning(prompt)
    for r in rewrites:
        for frame in ("A photo with ", "Show "):
            r = r.removeprefix(frame)
        assert meaning(r) == base


def test_generated_suite_parses_and_is_deterministic():
    suite = generate_suite(60, seed=4)
    assert suite == generate_suite(60, seed=4)
    for prompt in suite:
        SyntheticWorld(program_for(prompt))


def test_language_roles_record_usage():
    meter = UsageMeter()
    lang = SyntheticLanguage(meter)
    lang.parser("a dog")
    lang.rewriter("a dog; a cat", 2)
    lang.reviewer("a dog", {}, {"objects": []})
    assert meter.snapshot().mllm_calls == 3 and meter.calls_for("reviewer") == 1


# -- synthetic world -------------------------------------------------------------

PROMPT = "three cats; a red ball; the cat is to the left of the ball; in a park"


def test_zero_noise_scene_satisfies_program():
    prog = program_for(PROMPT)
    world = SyntheticWorld(prog)
    scene = world.generate("x", 1)
    cats = world.detect(scene, "cat")
    assert len(cats) == 3 and all(d.score >= 0.65 for d in cats)
    suite = world.suite()
    states = PredicateVerifier(prog, text_verifier=suite.text_verifier).verify_program(suite.make_cache(scene))
    assert all(s.state == SATISFIED for s in states.states.values())


def test_distractor_makes_exact_count_uncertain():
    prog = program_for(PROMPT)
    world = SyntheticWorld(prog, NoiseConfig(distractor_rate=1.0))
    scene = world.generate("x", 1)
    suite = world.suite()
    st_ = PredicateVerifier(prog).verify_program(suite.make_cache(scene))
    cex = next(p.predicate_id for p in prog.predicates if p.family == "count_exact")
    assert st_[cex].evidence == {"strong": 3, "weak": 4, "target": 3}
    assert st_[cex].state == UNCERTAIN


def test_generation_is_deterministic_and_seed_sensitive():
    prog = program_for(PROMPT)
    noise = NoiseConfig(drop_object=0.3, count_delta=0.5, attribute_flip=0.5, relation_violate=0.5,
                        prompt_bias=0.0)
    a, b = SyntheticWorld(prog, noise), SyntheticWorld(prog, noise)
    assert a.generate("p", 7) == b.generate("p", 7)
    variants = {repr(a.generate("p", s).instances) for s in range(12)}
    assert len(variants) > 1


def test_prompt_bias_repeats_errors_for_same_wording():
    prog = program_for(PROMPT)
    world = SyntheticWorld(prog, NoiseConfig(count_delta=0.5, attribute_flip=0.5, prompt_bias=1.0))
    first = world.generate("p", 1)
    assert all(world.generate("p", s).instances == first.instances for s in range(2, 6))


def test_noise_channels_break_their_predicates():
    prog = program_for(PROMPT)
    cases = {
        "relation_violate": "relation", "attribute_flip": "attribute", "scene_flip": "global_scene",
        "drop_object": "count_exact",
    }
    for channel, family in cases.items():
        world = SyntheticWorld(prog, NoiseConfig(**{channel: 1.0}))
        suite = world.suite()
        sv = PredicateVerifier(prog).verify_program(suite.make_cache(world.generate("p", 0)))
        broken = [p for p in prog.predicates if p.family == family and sv[p.predicate_id].state != SATISFIED]
        assert broken, channel


def test_text_miss_channel():
    prog = program_for('a sign; with the text "OPEN"')
    world = SyntheticWorld(prog, NoiseConfig(text_miss=1.0))
    assert world.text_verifier(world.generate("p", 0), "OPEN") == VIOLATED
    assert SyntheticWorld(prog).text_verifier(SyntheticWorld(prog).generate("p", 0), "OPEN") == SATISFIED


def test_edits_follow_instructions():
    prog = program_for(PROMPT)
    cex = next(p for p in prog.predicates if p.family == "count_exact")
    att = next(p for p in prog.predicates if p.family == "attribute")
    scn = next(p for p in prog.predicates if p.family == "global_scene")
    world = SyntheticWorld(prog, NoiseConfig(count_delta=1.0, prompt_bias=1.0))
    for seed in range(4):
        scene = world.generate("p", seed)
        before = scene.count(cex.subject)
        op = "add" if before < 3 else "remove"
        action = Action("edit", op, abs(3 - before))
        fixed = world.edit(scene, build_edit_instruction(cex.predicate_id, prog, action), 1)
        assert before != 3 and fixed.count(cex.subject) == 3

    world = SyntheticWorld(prog, NoiseConfig(attribute_flip=1.0, scene_flip=1.0))
    scene = world.generate("p", 0)
    assert not world.check_truth(scene, att) and not world.check_truth(scene, scn)
    fixed = world.edit(scene, build_edit_instruction(att.predicate_id, prog, Action("edit", "attribute")), 2)
    assert world.check_truth(fixed, att)
    fixed = world.edit(fixed, build_edit_instruction(scn.predicate_id, prog, Action("edit", "scene")), 3)
    assert world.check_truth(fixed, scn)
    assert fixed.uid != scene.uid


def test_failed_edit_returns_new_uid_same_content():
    prog = program_for(PROMPT)
    world = SyntheticWorld(prog, NoiseConfig(edit_success=0.0))
    scene = world.generate("p", 0)
    out = world.edit(scene, "Add 1 more cat so that there are exactly 4 cat in the image. ", 5)
    assert out.instances == scene.instances and out.uid != scene.uid
    with pytest.raises(UnparseableInstruction):
        world.edit(scene, "Make it nicer.", 5)


@pytest.mark.parametrize("text,expected", [
    ("Add 2 more dog so that there are exactly 3 dog in the image. ", {"op": "add", "count": 2, "object": "dog"}),
    ("Change the dog's pose so that it is clearly sitting. ", {"op": "attribute", "form": "pose", "object": "dog",
                                                               "value": "sitting"}),
    ("Change the cup so that it has a striped pattern. ", {"op": "attribute", "form": "pattern", "object": "cup",
                                                           "value": "striped"}),
    ("Change the dog so that it is clearly chasing the ball. ", {"op": "attribute", "form": "action",
                                                                 "object": "dog", "value": "chasing ball"}),
    ("Change the car so that it is red. ", {"op": "attribute", "form": "plain", "object": "car", "value": "red"}),
])
def test_parse_instruction(text, expected):
    assert parse_instruction(text) == expected


def test_auditor_is_an_oracle_and_records_usage():
    prog = program_for("a red ball")
    world = SyntheticWorld(prog, NoiseConfig(attribute_flip=1.0))
    scene = world.generate("p", 0)
    att = next(p for p in prog.predicates if p.family == "attribute")
    verdict = world.auditor(scene, "a red ball", [describe_predicate(att, prog)])
    assert not verdict.approved
    assert world.meter.calls_for("auditor") == 1 and world.meter.snapshot().image_inputs == 1


def test_region_noise_is_bounded_and_deterministic():
    prog = program_for("a red ball")
    world = SyntheticWorld(prog, NoiseConfig(region_noise=0.3))
    scene = world.generate("p", 0)
    region = Region("full")
    a = world.region_score(scene, region, "anything")
    assert a == world.region_score(scene, region, "anything") and 0.2 <= a <= 0.8


# -- MLLM client -------------------------------------------------------------------


def test_scripted_client_retries_once_on_schema_failure():
    meter = UsageMeter()
    client = scripted_client({"rewriter": ["not json", {"rewritten_prompts": ["a", "b"]}]}, meter)
    assert client.rewrite("p", 2) == ["a", "b"]
    assert meter.calls_for("rewriter") == 2
    assert [c.ok for c in meter.calls] == [False, True]


def test_scripted_client_raises_after_two_failures():
    meter = UsageMeter()
    client = scripted_client({"auditor": [{"wrong": 1}]}, meter)
    with pytest.raises(BackendFailure):
        client.audit(b"png", "p", ["the dog is red"])
    assert meter.calls_for("auditor") == 2
    assert meter.snapshot().image_inputs == 2


def test_client_renders_templates_and_images():
    client = scripted_client({"auditor": {"all_checks_passed": True, "short_reason": "fine"},
                              "crop_verifier": {"state": "satisfied"}})
    verdict = client.audit(b"\x89PNG", "a red dog", ["the dog is red"])
    assert verdict.approved and verdict.reasons == ("fine",)
    role, messages = client.transport.sent[0]
    assert messages[0]["content"] == ROLES["auditor"].system
    parts = messages[1]["content"]
    assert parts[0]["text"] == 'user_prompt: a red dog\nchecks_to_verify: ["the dog is red"]'
    assert parts[1]["image_url"]["url"] == "data:image/png;base64," + base64.b64encode(b"\x89PNG").decode()
    assert client.verify_crop(b"x", (1, 2, 3, 4), "dog sitting") == SATISFIED


def test_few_shots_extend_parser_system_prompt():
    reply = {"source_prompt": "a cat", "objects": [], **{b: [] for b in BUCKETS.values()}}
    client = MLLMClient(scripted_client({"parser": reply}).transport,
                        few_shots=[{"prompt": "a dog", "program": "{}"}])
    client.parse("a cat")
    system = client.transport.sent[0][1][0]["content"]
    assert system.startswith(ROLES["parser"].system) and "user_prompt: a dog" in system


def test_http_transport_against_mock_endpoint():
    seen = []

    def handler(request: httpx.Request):
        body = json.loads(request.content)
        seen.append((request.url.path, request.headers.get("authorization"), body))
        reply = {"state": "satisfied"}
        return httpx.Response(200, json={"choices": [{"message": {"content": json.dumps(reply)}}],
                                         "usage": {"prompt_tokens": 11, "completion_tokens": 3}})

    endpoint = EndpointConfig(mllm_url="http://mllm.test/v1", api_key="k", seed=9)
    transport = HTTPTransport(endpoint, httpx.Client(transport=httpx.MockTransport(handler)))
    meter = UsageMeter()
    assert MLLMClient(transport, meter).verify_text(b"img", "OPEN") == SATISFIED
    path, auth, body = seen[0]
    assert path == "/v1/chat/completions" and auth == "Bearer k"
    assert body["seed"] == 9 and body["temperature"] == 0.0 and body["response_format"] == {"type": "json_object"}
    assert meter.snapshot() == Usage(mllm_calls=1, tokens_in=11, tokens_out=3, image_inputs=1)


def test_http_transport_errors_become_backend_failure():
    transport = HTTPTransport(EndpointConfig(mllm_url="http://mllm.test"),
                              httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(500))))
    with pytest.raises(BackendFailure):
        MLLMClient(transport).verify_text(b"img", "OPEN")
    with pytest.raises(BackendFailure):
        HTTPTransport(EndpointConfig())


def test_load_script(tmp_path):
    path = tmp_path / "s.json"
    path.write_text('{"parser": []}')
    assert load_script(path) == {"parser": []}
    path.write_text("{")
    with pytest.raises(SchemaViolation):
        load_script(path)


# -- image service -------------------------------------------------------------------


def test_image_service_over_mock_transport():
    mask = rasterize_box((0, 0, 4, 4), 8, 8)
    png = base64.b64encode(b"img").decode()

    def handler(request: httpx.Request):
        body = json.loads(request.content)
        path = request.url.path
        if path in ("/generate", "/edit"):
            return httpx.Response(200, json={"image": png, "width": 8, "height": 8})
        if path == "/detect":
            return httpx.Response(200, json={"detections": [
                {"score": 0.9, "box": [0, 0, 4, 4], "mask": mask_to_rle(mask)},
                {"score": 0.2, "box": [4, 4, 8, 8]},
            ]})
        if path == "/region_score":
            return httpx.Response(200, json={"score": 0.7 if body["mask"] else 0.1})
        if path == "/depth":
            return httpx.Response(200, json={"width": 8, "height": 8, "values": list(range(64))})
        return httpx.Response(404)

    service = ImageService("http://img.test", client=httpx.Client(transport=httpx.MockTransport(handler)))
    meter = UsageMeter()
    suite = http_suite(service, scripted_client({}), meter)
    image = suite.generate("a dog", 1)
    assert image == ImageRef(b"img", 8, 8)
    suite.edit(image, "Change the dog so that it is red. ", 2)
    assert meter.snapshot().image_execs == 2
    cache = suite.make_cache(image)
    dets = cache.detections("dog")
    assert len(dets) == 1 and np.array_equal(dets[0].mask, mask)
    assert cache.region_score(cache.detection_region("dog", 0), "red dog") == 0.7
    assert cache.region_score(cache.full_region(), "park") == 0.1
    assert cache.depth_map()[7, 7] == 63.0


def test_image_service_failure():
    service = ImageService("http://img.test",
                           client=httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(503))))
    with pytest.raises(BackendFailure):
        service.generate("x", 0)


# -- offline evidence ------------------------------------------------------------------


def evidence_doc():
    return {
        "width": 16, "height": 16,
        "detections": {"Dog": [{"score": 0.9, "box": [0, 0, 8, 8]}, {"score": 0.1, "box": [8, 8, 16, 16]}]},
        "region_scores": [{"region": "det:dog:0", "text": "red dog", "score": 0.8}],
        "texts": {"OPEN": "violated"},
    }


def test_offline_evidence_lookup():
    ev = OfflineEvidence(evidence_doc())
    cache = ev.cache()
    assert len(cache.detections("dog")) == 1
    assert cache.region_score(cache.detection_region("dog", 0), "red dog") == 0.8
    assert cache.region_score(cache.full_region(), "park") is None
    assert ev.text_verifier(None, "OPEN") == VIOLATED
    with pytest.raises(BackendFailure):
        ev.text_verifier(None, "CLOSED")
    assert cache.depth_map() is None


@pytest.mark.parametrize("mutate", [
    lambda d: d.pop("width"),
    lambda d: d["detections"]["Dog"][0].update(score=2.0),
    lambda d: d.update(texts={"OPEN": "maybe"}),
    lambda d: d["detections"]["Dog"][0].update(mask="1,2,3"),
    lambda d: d.update(depth={"values": [1, 2, 3]}),
])
def test_offline_evidence_schema_errors(mutate):
    doc = evidence_doc()
    mutate(doc)
    with pytest.raises(SchemaViolation):
        OfflineEvidence(doc)


# -- usage ------------------------------------------------------------------------------


@settings(max_examples=30)
@given(st.lists(st.tuples(st.integers(0, 50), st.integers(0, 50), st.integers(0, 2)), max_size=10))
def test_usage_meter_accumulates(calls):
    meter = UsageMeter()
    for tin, tout, imgs in calls:
        meter.record_mllm("x", tin, tout, imgs)
    meter.record_exec("generator")
    total = meter.snapshot()
    assert total.mllm_calls == len(calls) and total.image_execs == 1
    assert total.tokens_in == sum(c[0] for c in calls)
    assert (total - total) == Usage()
