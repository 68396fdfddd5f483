"""A deterministic symbolic image world for end-to-end tests and ablations.

Images are ``SyntheticScene`` values: boxes with depth and attribute maps, a
scene map and visible strings. Generation builds a layout that satisfies the
program and then applies seeded error channels. A ``prompt_bias`` share of
every error draw is keyed to the prompt wording, so retrying the same prompt
tends to repeat the same mistakes while a rewrite gets fresh ones.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

import numpy as np

from ..config import NoiseConfig, Thresholds
from ..errors import BackendFailure, InfeasibleProgram, UnparseableInstruction
from ..evidence import Detection, EvidenceCache, Region, footprint_from, rasterize_box
from ..instructions import RELATION_PHRASES, describe_predicate
from ..program import (
    ATTRIBUTE, COUNT_AT_LEAST, COUNT_EXACT, COUNT_FAMILIES, EXCLUSION, GLOBAL_SCENE, OTHER, RELATION,
    VISIBLE_TEXT, Predicate, VisualProgram,
)
from ..relations import score_relation
from ..states import SATISFIED, UNCERTAIN, VIOLATED
from ..verifier import PredicateVerifier, attribute_query, scene_query
from . import AuditVerdict, BackendSuite, UsageMeter

SIZE = 128
TRUE_SCORE = 0.85
FALSE_SCORE = 0.15
PRIMARY_SCORE = 0.92
DISTRACTOR_SCORE = 0.40
LAYOUT_TRIES = 400


def seeded(*parts: Any) -> np.random.Generator:
    """RNG keyed by a stable hash of the parts (independent of PYTHONHASHSEED)."""
    digest = hashlib.sha256(json.dumps([str(p) for p in parts]).encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def stable_int(*parts: Any) -> int:
    digest = hashlib.sha256(json.dumps([str(p) for p in parts]).encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class Instance:
    object_id: str
    label: str
    box: tuple[float, float, float, float]
    depth: float
    attrs: Mapping[str, str] = field(default_factory=dict)
    rank: int = 0


@dataclass(frozen=True)
class SyntheticScene:
    width: int
    height: int
    instances: tuple[Instance, ...]
    scene: Mapping[str, str]
    texts: tuple[str, ...]
    uid: int
    prompt: str = ""

    def of(self, object_id: str) -> list[Instance]:
        return sorted((i for i in self.instances if i.object_id == object_id), key=lambda i: i.rank)

    def count(self, object_id: str) -> int:
        return sum(1 for i in self.instances if i.object_id == object_id)


def attr_key(pred: Predicate) -> str:
    if pred.attribute_name == OTHER:
        return f"other:{pred.raw_name}"
    return str(pred.attribute_name)


def attr_value(pred: Predicate, program: VisualProgram) -> str:
    value = str(pred.expected_value)
    if pred.attribute_name == "action" and pred.reference:
        value = f"{value} {program.label_of(pred.reference)}"
    return value


def scene_key(pred: Predicate) -> str:
    if pred.attribute_name == OTHER:
        return f"other:{pred.raw_name}"
    return str(pred.attribute_name)


def _overlap(a, b) -> float:
    w = min(a[2], b[2]) - max(a[0], b[0])
    h = min(a[3], b[3]) - max(a[1], b[1])
    return max(0.0, w) * max(0.0, h)


def _clamp_box(box, size: int = SIZE):
    x0, y0, x1, y1 = box
    w, h = x1 - x0, y1 - y0
    x0 = min(max(0.0, x0), size - w)
    y0 = min(max(0.0, y0), size - h)
    return (float(round(x0)), float(round(y0)), float(round(x0 + w)), float(round(y0 + h)))


def _random_box(rng: np.random.Generator, lo: int = 14, hi: int = 30, size: int = SIZE):
    w = int(rng.integers(lo, hi + 1))
    h = int(rng.integers(lo, hi + 1))
    x = int(rng.integers(0, size - w + 1))
    y = int(rng.integers(0, size - h + 1))
    return (float(x), float(y), float(x + w), float(y + h))


def _free_box(rng: np.random.Generator, taken: Sequence, tries: int = 60):
    box = _random_box(rng, 10, 18)
    for _ in range(tries):
        if all(_overlap(box, t) == 0.0 for t in taken):
            return box
        box = _random_box(rng, 10, 18)
    return box


class SyntheticWorld:
    """Ground truth for one program plus every backend role over it."""

    def __init__(
        self,
        program: VisualProgram,
        noise: NoiseConfig | None = None,
        thresholds: Thresholds | None = None,
        meter: UsageMeter | None = None,
        fail_generate: int = 0,
    ):
        self.program = program
        self.noise = noise or NoiseConfig()
        self.thresholds = thresholds or Thresholds()
        self.meter = meter or UsageMeter()
        # first N generator calls raise BackendFailure (for retry tests)
        self._fail_generate = fail_generate
        self._names: dict[str, set[str]] = {}
        for o in program.objects:
            names = {o.label.lower(), o.query.lower(), *(a.lower() for a in o.aliases)}
            self._names[o.object_id] = names
        self._attr_lookup: dict[str, list[Predicate]] = {}
        self._scene_lookup: dict[str, list[Predicate]] = {}
        self._checks: dict[str, Predicate] = {}
        for p in program.predicates:
            if p.family == ATTRIBUTE:
                self._attr_lookup.setdefault(attribute_query(p, program), []).append(p)
            elif p.family == GLOBAL_SCENE:
                self._scene_lookup.setdefault(scene_query(p), []).append(p)
            self._checks[describe_predicate(p, program)] = p
        self.layout = self._solve_layout()

    # -- construction ---------------------------------------------------------

    def required_counts(self) -> dict[str, int]:
        need: dict[str, int] = {}
        for o in self.program.positive_objects():
            need[o.object_id] = 1
        for p in self.program.predicates:
            if p.family in COUNT_FAMILIES and p.subject in need:
                need[p.subject] = max(need[p.subject], int(p.expected_value)) if p.family == COUNT_AT_LEAST \
                    else int(p.expected_value)
        return need

    def _attrs_for(self, object_id: str) -> dict[str, str]:
        attrs = {}
        for p in self.program.predicates:
            if p.family == ATTRIBUTE and p.subject == object_id:
                attrs[attr_key(p)] = attr_value(p, self.program)
        return attrs

    def _depths(self) -> dict[str, float]:
        """Depth per object: every in_front_of/behind edge spans one 40-unit level."""
        level = {o.object_id: 0 for o in self.program.objects}
        edges = []
        for p in self.program.predicates:
            if p.family == RELATION and p.relation_name in ("in_front_of", "behind"):
                near, far = (p.subject, p.reference) if p.relation_name == "in_front_of" else (p.reference, p.subject)
                edges.append((near, far))
        for _ in range(len(level) + 1):
            changed = False
            for near, far in edges:
                if level.get(near, 0) <= level.get(far, 0):
                    level[near] = level.get(far, 0) + 1
                    changed = True
            if not changed:
                break
        else:
            raise InfeasibleProgram("cyclic depth ordering")
        return {k: 30.0 + 40.0 * v for k, v in level.items()}

    def _propose(self, rng: np.random.Generator, need: Mapping[str, int]) -> dict[str, tuple]:
        boxes = {oid: _random_box(rng) for oid in need}
        for p in self.program.predicates:
            if p.family != RELATION or p.subject not in boxes or p.reference not in boxes:
                continue
            ref = boxes[p.reference]
            if ref is None or boxes[p.subject] is None:
                continue
            rw, rh = ref[2] - ref[0], ref[3] - ref[1]
            if p.relation_name == "on":
                w = min(boxes[p.subject][2] - boxes[p.subject][0], rw)
                h = boxes[p.subject][3] - boxes[p.subject][1]
                cx = (ref[0] + ref[2]) / 2 + rng.uniform(-0.2, 0.2) * (rw - w)
                boxes[p.subject] = _clamp_box((cx - w / 2, ref[1] - h, cx + w / 2, ref[1]))
                if boxes[p.subject][3] != ref[1]:
                    boxes[p.subject] = None  # no room above the support
            elif p.relation_name in ("in", "inside"):
                big = (ref[0], ref[1], ref[0] + max(rw, 40), ref[1] + max(rh, 40))
                boxes[p.reference] = ref = _clamp_box(big)
                rw, rh = ref[2] - ref[0], ref[3] - ref[1]
                w, h = rw // 2, rh // 2
                x0 = ref[0] + (rw - w) // 2
                y0 = ref[1] + (rh - h) // 2
                boxes[p.subject] = (x0, y0, x0 + w, y0 + h)
            elif p.relation_name == "overlapping":
                w, h = rw, rh
                boxes[p.subject] = _clamp_box((ref[0] + w * 0.3, ref[1] + h * 0.2, ref[0] + w * 1.3, ref[1] + h * 1.2))
        return boxes

    def _solve_layout(self) -> dict[str, tuple]:
        need = self.required_counts()
        depths = self._depths()
        relations = [p for p in self.program.predicates if p.family == RELATION]
        rng = seeded("layout", self.program.program_id)
        verifier = PredicateVerifier(self.program, self.thresholds)
        for _ in range(LAYOUT_TRIES):
            boxes = self._propose(rng, need)
            if any(b is None for b in boxes.values()):
                continue
            scene = self._build(boxes, need, depths, rng, uid=0)
            cache = self.oracle_cache(scene)
            if all(verifier.verify_relation(p, cache).state == SATISFIED for p in relations):
                return {"boxes": boxes, "depths": depths, "scene": scene}
        raise InfeasibleProgram("no layout satisfies every relation predicate")

    def _build(self, boxes, need, depths, rng, uid: int) -> SyntheticScene:
        instances = []
        taken = list(boxes.values())
        for oid, n in need.items():
            label = self.program.label_of(oid)
            attrs = self._attrs_for(oid)
            for k in range(n):
                box = boxes[oid] if k == 0 else _free_box(rng, taken)
                if k:
                    taken.append(box)
                instances.append(Instance(oid, label, box, depths.get(oid, 30.0), attrs, k))
        scene = {scene_key(p): str(p.expected_value) for p in self.program.predicates if p.family == GLOBAL_SCENE}
        texts = tuple(str(p.expected_value) for p in self.program.predicates if p.family == VISIBLE_TEXT)
        return SyntheticScene(SIZE, SIZE, tuple(instances), scene, texts, uid)

    # -- generation and editing ----------------------------------------------

    def _draw(self, rng_seed: np.random.Generator, prompt: str, channel: str, item: str) -> float:
        if rng_seed.random() < self.noise.prompt_bias:
            return float(seeded("prompt", self.program.program_id, prompt, channel, item).random())
        return float(rng_seed.random())

    def generate(self, prompt: str, seed: int) -> SyntheticScene:
        if self._fail_generate > 0:
            self._fail_generate -= 1
            raise BackendFailure("synthetic generator failure")
        uid = stable_int("gen", self.program.program_id, prompt, seed)
        rng = seeded("gen", uid)
        base: SyntheticScene = self.layout["scene"]
        instances = list(base.instances)
        nz = self.noise
        jitter = seeded("jitter", uid)

        for p in self.program.predicates:
            if p.family != RELATION or nz.relation_violate == 0.0:
                continue
            if self._draw(rng, prompt, "relation", p.predicate_id) < nz.relation_violate:
                instances = self._violate_relation(instances, p, jitter)
        for o in self.program.positive_objects():
            if nz.drop_object and self._draw(rng, prompt, "drop", o.object_id) < nz.drop_object:
                instances = [i for i in instances if i.object_id != o.object_id]
        for p in self.program.predicates:
            if p.family in COUNT_FAMILIES and nz.count_delta:
                if self._draw(rng, prompt, "count", p.predicate_id) < nz.count_delta:
                    have = [i for i in instances if i.object_id == p.subject]
                    if not have:
                        continue
                    down = p.family == COUNT_AT_LEAST or jitter.random() < 0.5 or int(p.expected_value) == 0
                    if down:
                        instances.remove(max(have, key=lambda i: i.rank))
                    else:
                        instances.append(self._extra(have, instances, jitter))
            elif p.family == ATTRIBUTE and nz.attribute_flip:
                if self._draw(rng, prompt, "attribute", p.predicate_id) < nz.attribute_flip:
                    key, value = attr_key(p), attr_value(p, self.program)
                    instances = [
                        replace(i, attrs={**i.attrs, key: f"not {value}"}) if i.object_id == p.subject else i
                        for i in instances
                    ]
        scene_map = dict(base.scene)
        texts = list(base.texts)
        for p in self.program.predicates:
            if p.family == GLOBAL_SCENE and nz.scene_flip:
                if self._draw(rng, prompt, "scene", p.predicate_id) < nz.scene_flip:
                    scene_map[scene_key(p)] = f"not {p.expected_value}"
            elif p.family == VISIBLE_TEXT and nz.text_miss:
                if self._draw(rng, prompt, "text", p.predicate_id) < nz.text_miss:
                    if str(p.expected_value) in texts:
                        texts.remove(str(p.expected_value))
        return SyntheticScene(SIZE, SIZE, tuple(instances), scene_map, tuple(texts), uid, prompt)

    def _extra(self, have: Sequence[Instance], instances: Sequence[Instance], rng) -> Instance:
        proto = min(have, key=lambda i: i.rank)
        box = _free_box(rng, [i.box for i in instances])
        return replace(proto, box=box, rank=max(i.rank for i in have) + 1)

    def _violate_relation(self, instances: list[Instance], p: Predicate, rng) -> list[Instance]:
        sub = next((i for i in instances if i.object_id == p.subject and i.rank == 0), None)
        ref = next((i for i in instances if i.object_id == p.reference and i.rank == 0), None)
        if sub is None or ref is None:
            return instances
        if p.relation_name in ("in_front_of", "behind"):
            new_sub, new_ref = replace(sub, depth=ref.depth), replace(ref, depth=sub.depth)
            if sub.depth == ref.depth:
                return instances
        elif p.relation_name in ("left", "right", "above", "below"):
            new_sub, new_ref = self._swap(sub, ref)
        else:
            # move the subject to the far corner from the reference
            w, h = sub.box[2] - sub.box[0], sub.box[3] - sub.box[1]
            cx = (ref.box[0] + ref.box[2]) / 2
            cy = (ref.box[1] + ref.box[3]) / 2
            x0 = 0.0 if cx > SIZE / 2 else SIZE - w
            y0 = 0.0 if cy > SIZE / 2 else SIZE - h
            new_sub, new_ref = replace(sub, box=(x0, y0, x0 + w, y0 + h)), ref
        return [new_sub if i is sub else new_ref if i is ref else i for i in instances]

    @staticmethod
    def _swap(a: Instance, b: Instance) -> tuple[Instance, Instance]:
        def recenter(box, cx, cy):
            w, h = box[2] - box[0], box[3] - box[1]
            return _clamp_box((round(cx - w / 2), round(cy - h / 2), round(cx - w / 2) + w, round(cy - h / 2) + h))

        ca = ((a.box[0] + a.box[2]) / 2, (a.box[1] + a.box[3]) / 2)
        cb = ((b.box[0] + b.box[2]) / 2, (b.box[1] + b.box[3]) / 2)
        return replace(a, box=recenter(a.box, *cb)), replace(b, box=recenter(b.box, *ca))

    def object_by_label(self, label: str) -> str:
        label = label.strip().lower()
        for o in self.program.objects:
            if label in self._names[o.object_id]:
                return o.object_id
        raise UnparseableInstruction(f"unknown object {label!r}")

    def edit(self, scene: SyntheticScene, instruction: str, seed: int) -> SyntheticScene:
        op = parse_instruction(instruction)
        uid = stable_int("edit", scene.uid, instruction, seed)
        rng = seeded("edit", uid)
        # resolve names before deciding success so bad instructions always fail loudly
        oid = self.object_by_label(op["object"]) if "object" in op else None
        if rng.random() >= self.noise.edit_success:
            return replace(scene, uid=uid)
        instances = list(scene.instances)
        kind = op["op"]
        if kind == "add":
            have = [i for i in instances if i.object_id == oid]
            for _ in range(op["count"]):
                if have:
                    new = self._extra(have, instances, rng)
                else:
                    new = next(i for i in self.layout["scene"].instances if i.object_id == oid and i.rank == 0)
                instances.append(new)
                have.append(new)
        elif kind == "remove":
            have = [i for i in instances if i.object_id == oid]
            if op["all"]:
                instances = [i for i in instances if i.object_id != oid]
            elif have:
                instances.remove(max(have, key=lambda i: i.rank))
        elif kind == "attribute":
            pred = self._match_attribute(oid, op)
            key, value = attr_key(pred), attr_value(pred, self.program)
            instances = [replace(i, attrs={**i.attrs, key: value}) if i.object_id == oid else i for i in instances]
        elif kind == "scene":
            pred = self._match_scene(op)
            scene = replace(scene, scene={**scene.scene, scene_key(pred): str(pred.expected_value)})
        elif kind == "move":
            target = next(i for i in self.layout["scene"].instances if i.object_id == oid and i.rank == 0)
            instances = [replace(i, box=target.box, depth=target.depth) if i.object_id == oid and i.rank == 0 else i
                         for i in instances]
            ref = self.object_by_label(op["reference"])
            ref_target = next(i for i in self.layout["scene"].instances if i.object_id == ref and i.rank == 0)
            instances = [replace(i, box=ref_target.box, depth=ref_target.depth)
                         if i.object_id == ref and i.rank == 0 else i for i in instances]
        elif kind == "text":
            if op["text"] not in scene.texts:
                scene = replace(scene, texts=scene.texts + (op["text"],))
        return replace(scene, instances=tuple(instances), uid=uid)

    def _match_attribute(self, oid: str, op: Mapping[str, Any]) -> Predicate:
        for p in self.program.predicates:
            if p.family != ATTRIBUTE or p.subject != oid:
                continue
            value = str(p.expected_value)
            if op["form"] == "action":
                if op["value"] in (value, attr_value(p, self.program)) and p.attribute_name == "action":
                    return p
            elif op["form"] == "other":
                if op["value"] == value and op.get("name") in (p.raw_name, p.attribute_name):
                    return p
            elif op["form"] in ("pose", "state", "pattern"):
                if p.attribute_name == op["form"] and op["value"] == value:
                    return p
            elif op["value"] == value and p.attribute_name in ("color", "material", "shape", "size"):
                return p
        raise UnparseableInstruction(f"no attribute predicate matches {op}")

    def _match_scene(self, op: Mapping[str, Any]) -> Predicate:
        for p in self.program.predicates:
            if p.family == GLOBAL_SCENE and str(p.expected_value) == op["value"]:
                return p
        raise UnparseableInstruction(f"no scene predicate matches {op}")

    # -- perception -------------------------------------------------------------

    def detect(self, scene: SyntheticScene, query: str, *, noisy: bool = True) -> list[Detection]:
        q = query.strip().lower()
        cn = self.noise.confidence_noise if noisy else 0.0
        rng = seeded("det", scene.uid, q)
        found = []
        for inst in sorted(scene.instances, key=lambda i: (i.object_id, i.rank)):
            if q not in self._names.get(inst.object_id, ()):
                continue
            score = PRIMARY_SCORE if inst.rank == 0 else 0.90 - 0.005 * min(inst.rank, 10)
            if cn:
                score += rng.uniform(-cn, cn)
            score = float(min(1.0, max(0.0, score)))
            mask = rasterize_box(inst.box, scene.width, scene.height)
            found.append(Detection(q, score, inst.box, mask))
        known = any(q in names for names in self._names.values())
        if noisy and known and self.noise.distractor_rate and rng.random() < self.noise.distractor_rate:
            box = _random_box(rng, 8, 14)
            found.append(Detection(q, DISTRACTOR_SCORE, box, rasterize_box(box, scene.width, scene.height)))
        # detector confidence floor is applied inside the client
        return [d for d in found if d.score >= self.thresholds.detector_confidence]

    def depth_map(self, scene: SyntheticScene) -> np.ndarray:
        raster = np.ones((scene.height, scene.width), dtype=np.float64)
        for inst in sorted(scene.instances, key=lambda i: i.depth):
            raster[rasterize_box(inst.box, scene.width, scene.height)] = inst.depth
        return raster

    def _instance_for_mask(self, scene: SyntheticScene, mask: np.ndarray) -> Instance | None:
        best, best_hits = None, 0
        for inst in scene.instances:
            hits = int(np.count_nonzero(mask & rasterize_box(inst.box, scene.width, scene.height)))
            if hits > best_hits:
                best, best_hits = inst, hits
        return best

    def _instance_for_box(self, scene: SyntheticScene, box) -> Instance | None:
        for inst in scene.instances:
            if tuple(inst.box) == tuple(box):
                return inst
        return None

    def _attribute_truth(self, inst: Instance, text: str) -> bool | None:
        preds = [p for p in self._attr_lookup.get(text, ()) if p.subject == inst.object_id]
        if not preds:
            return None
        return all(inst.attrs.get(attr_key(p)) == attr_value(p, self.program) for p in preds)

    def _scene_truth(self, scene: SyntheticScene, text: str) -> bool | None:
        preds = self._scene_lookup.get(text)
        if not preds:
            return None
        return all(scene.scene.get(scene_key(p)) == str(p.expected_value) for p in preds)

    def region_score(self, scene: SyntheticScene, region: Region, text: str) -> float:
        if region.mask is None or region.key == "background":
            truth = self._scene_truth(scene, text)
        else:
            inst = self._instance_for_mask(scene, region.mask)
            truth = None if inst is None else self._attribute_truth(inst, text)
        score = 0.5 if truth is None else (TRUE_SCORE if truth else FALSE_SCORE)
        if self.noise.region_noise:
            score += seeded("region", scene.uid, region.key, text).uniform(-1, 1) * self.noise.region_noise
        return float(min(1.0, max(0.0, score)))

    # -- MLLM-backed roles ------------------------------------------------------

    def _usage(self, role: str, payload: str, reply: str, images: int) -> None:
        self.meter.record_mllm(role, 120 + len(payload.split()), 4 + len(reply.split()), images)

    def text_verifier(self, scene: SyntheticScene, text: str) -> str:
        verdict = SATISFIED if text in scene.texts else VIOLATED
        self._usage("text_verifier", text, verdict, 1)
        return verdict

    def crop_verifier(self, scene: SyntheticScene, box, text: str) -> str:
        inst = self._instance_for_box(scene, box)
        truth = None if inst is None else self._attribute_truth(inst, text)
        verdict = UNCERTAIN if truth is None else (SATISFIED if truth else VIOLATED)
        self._usage("crop_verifier", text, verdict, 1)
        return verdict

    def check_truth(self, scene: SyntheticScene, pred: Predicate) -> bool:
        """Noise-free truth of a single predicate, used by the oracle auditor."""
        if pred.family == ATTRIBUTE:
            have = scene.of(pred.subject)
            key, value = attr_key(pred), attr_value(pred, self.program)
            return bool(have) and all(i.attrs.get(key) == value for i in have)
        if pred.family == GLOBAL_SCENE:
            return scene.scene.get(scene_key(pred)) == str(pred.expected_value)
        if pred.family == RELATION:
            sub, ref = scene.of(pred.subject), scene.of(pred.reference)
            if not sub or not ref or pred.relation_name not in RELATION_PHRASES:
                return False
            depth = self.depth_map(scene)
            fs = footprint_from(Detection("", 1.0, sub[0].box), scene.width, scene.height, depth)
            fr = footprint_from(Detection("", 1.0, ref[0].box), scene.width, scene.height, depth)
            q = score_relation(pred.relation_name, fs, fr, scene.width, scene.height).value
            return q >= self.thresholds.relation_sat
        if pred.family in COUNT_FAMILIES:
            n = scene.count(pred.subject)
            return n == int(pred.expected_value) if pred.family == COUNT_EXACT else n >= int(pred.expected_value)
        if pred.family == EXCLUSION:
            return scene.count(pred.subject) == 0
        return str(pred.expected_value) in scene.texts

    def auditor(self, scene: SyntheticScene, prompt: str, checks: Sequence[str]) -> AuditVerdict:
        reasons = []
        ok = True
        for check in checks:
            pred = self._checks.get(check)
            truth = pred is not None and self.check_truth(scene, pred)
            reasons.append(f"{check}: {'yes' if truth else 'no'}")
            ok = ok and truth
        if self.noise.auditor_error and seeded("audit", scene.uid).random() < self.noise.auditor_error:
            ok = not ok
        self._usage("auditor", prompt + " " + " ".join(checks), " ".join(reasons), 1)
        return AuditVerdict(ok, tuple(reasons))

    def oracle_cache(self, scene: SyntheticScene) -> EvidenceCache:
        return EvidenceCache(scene, scene.width, scene.height, lambda s, q: self.detect(s, q, noisy=False),
                             lambda s, r, t: self.region_score(s, r, t), self.depth_map)

    def suite(self, meter: UsageMeter | None = None) -> BackendSuite:
        if meter is not None:
            self.meter = meter
        return BackendSuite(
            generator=self.generate,
            editor=self.edit,
            detector=self.detect,
            image_size=lambda s: (s.width, s.height),
            region_scorer=self.region_score,
            depth=self.depth_map,
            text_verifier=self.text_verifier,
            crop_verifier=self.crop_verifier,
            auditor=self.auditor,
            meter=self.meter,
        )


# -- instruction parsing ---------------------------------------------------------

_ADD = re.compile(r"^Add (\d+) more (.+?) so that ")
_REMOVE = re.compile(r"^Remove only the extra (.+?), preferably a secondary or background instance, so that (.+?)\. ")
_MOVE = re.compile(r"^Move the (.+?) so it is clearly (.+?) the (.+?)\. ")
_TEXT = re.compile(r'^Add the visible text "(.*)" clearly in the image\.')
_SCENE_BG = re.compile(r"^Change only the background and surrounding environment so the overall scene clearly reads as (.+?)\. ")
_SCENE_ATTR = re.compile(r"^Change only the scene-level (.+?) so it clearly reads as (.+?)\. ")
_POSE = re.compile(r"^Change the (.+?)'s pose so that it is clearly (.+?)\. ")
_STATE = re.compile(r"^Change the (.+?) so that its visible state clearly reads as (.+?)\. ")
_PATTERN = re.compile(r"^Change the (.+?) so that it has a (.+?) pattern\. ")
_ACTION = re.compile(r"^Change the (.+?) so that it is clearly (.+?)\. ")
_OTHER = re.compile(r"^Change the (.+?)'s (.+?) so that it is (.+?)\. ")
_PLAIN = re.compile(r"^Change the (.+?) so that it is (.+?)\. ")


def parse_instruction(text: str) -> dict[str, Any]:
    """Recover the operation from an edit instruction built from the templates."""
    if m := _ADD.match(text):
        return {"op": "add", "count": int(m.group(1)), "object": m.group(2)}
    if m := _REMOVE.match(text):
        return {"op": "remove", "object": m.group(1), "all": m.group(2).startswith("there is no ")}
    if m := _MOVE.match(text):
        return {"op": "move", "object": m.group(1), "relation": m.group(2), "reference": m.group(3)}
    if m := _TEXT.match(text):
        return {"op": "text", "text": m.group(1)}
    if m := _SCENE_BG.match(text):
        return {"op": "scene", "value": m.group(1)}
    if m := _SCENE_ATTR.match(text):
        return {"op": "scene", "name": m.group(1), "value": m.group(2)}
    if m := _POSE.match(text):
        return {"op": "attribute", "form": "pose", "object": m.group(1), "value": m.group(2)}
    if m := _STATE.match(text):
        return {"op": "attribute", "form": "state", "object": m.group(1), "value": m.group(2)}
    if m := _PATTERN.match(text):
        return {"op": "attribute", "form": "pattern", "object": m.group(1), "value": m.group(2)}
    if m := _ACTION.match(text):
        return {"op": "attribute", "form": "action", "object": m.group(1), "value": _strip_article(m.group(2))}
    if m := _OTHER.match(text):
        return {"op": "attribute", "form": "other", "object": m.group(1), "name": m.group(2), "value": m.group(3)}
    if m := _PLAIN.match(text):
        return {"op": "attribute", "form": "plain", "object": m.group(1), "value": m.group(2)}
    raise UnparseableInstruction(text[:80])


def _strip_article(value: str) -> str:
    # "chasing the ball" -> "chasing ball", matching attr_value
    return re.sub(r"\s+the\s+", " ", value)
