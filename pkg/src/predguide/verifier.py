"""Per-predicate verification over a shared evidence cache."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping

import numpy as np

from .config import Thresholds
from .errors import BackendFailure, DegenerateMask
from .evidence import EvidenceCache, mask_metrics
from .program import (
    ATTRIBUTE, COUNT_EXACT, COUNT_FAMILIES, EXCLUSION, GLOBAL_SCENE, OTHER, RELATION, RELATIONS,
    VISIBLE_TEXT, Predicate, VisualProgram,
)
from .relations import DEPTH_RELATIONS, score_relation
from .states import SATISFIED, STATES, UNCERTAIN, VIOLATED, state_from_score

TextVerifier = Callable[[Any, str], str]
CropVerifier = Callable[[Any, Any, str], str]

VERDICT_SCORE = {SATISFIED: 1.0, UNCERTAIN: 0.5, VIOLATED: 0.0}


@dataclass(frozen=True)
class PredicateState:
    state: str
    score: float | None = None
    note: str = ""
    evidence: Mapping[str, Any] = field(default_factory=dict, compare=True)

    def to_dict(self) -> dict[str, Any]:
        return {"state": self.state, "score": self.score, "note": self.note, "evidence": dict(self.evidence)}

    @property
    def effective_score(self) -> float:
        """The score, or a state-derived stand-in when the family has none."""
        return self.score if self.score is not None else VERDICT_SCORE[self.state]


@dataclass(frozen=True)
class StateVector:
    round: int
    states: Mapping[str, PredicateState]

    def __getitem__(self, predicate_id: str) -> PredicateState:
        return self.states[predicate_id]

    def __iter__(self):
        return iter(self.states)

    def __len__(self) -> int:
        return len(self.states)

    def satisfied_count(self) -> int:
        return sum(1 for s in self.states.values() if s.state == SATISFIED)

    def mean_score(self) -> float:
        if not self.states:
            return 1.0
        return float(np.mean([s.effective_score for s in self.states.values()]))

    def to_dict(self) -> dict[str, Any]:
        return {"round": self.round, "states": {k: v.to_dict() for k, v in self.states.items()}}


def count_state(strong: int, weak: int, target: int, exact: bool) -> str:
    """Three-way count state from strong/weak instance counts."""
    if exact:
        if strong == target and weak == target:
            return SATISFIED
        if strong <= target <= weak:
            return UNCERTAIN
        return VIOLATED
    if strong >= target:
        return SATISFIED
    if target <= weak:
        return UNCERTAIN
    return VIOLATED


def exclusion_state(max_score: float, thresholds: Thresholds) -> str:
    if max_score < thresholds.object_unc:
        return SATISFIED
    if max_score < thresholds.object_sat:
        return UNCERTAIN
    return VIOLATED


def attribute_query(pred: Predicate, program: VisualProgram) -> str:
    label = program.label_of(pred.subject)
    value = str(pred.expected_value)
    name = pred.attribute_name
    if name == "action":
        target = f" {program.label_of(pred.reference)}" if pred.reference else ""
        return f"{label} {value}{target}"
    if name in ("pose", "state"):
        return f"{label} {value}"
    if name == "pattern":
        return f"{value} pattern {label}"
    return f"{value} {label}"


def scene_query(pred: Predicate) -> str:
    return str(pred.expected_value)


class PredicateVerifier:
    """Evaluates a program's predicates against one candidate's evidence."""

    def __init__(
        self,
        program: VisualProgram,
        thresholds: Thresholds | None = None,
        text_verifier: TextVerifier | None = None,
        crop_verifier: CropVerifier | None = None,
        larger_depth_is_nearer: bool = True,
    ):
        self.program = program
        self.t = thresholds or Thresholds()
        self.text_verifier = text_verifier
        self.crop_verifier = crop_verifier
        self.larger_depth_is_nearer = larger_depth_is_nearer

    # -- helpers ---------------------------------------------------------

    def _query(self, object_id: str | None) -> str:
        return self.program.object(object_id).query

    def _filtered(self, cache: EvidenceCache, query: str) -> list[tuple[int, Any]]:
        """Detections surviving the mask-area filter, with cache indices."""
        out = []
        total = cache.width * cache.height
        for i, det in enumerate(cache.detections(query)):
            if self.t.min_mask_area_ratio > 0.0:
                if cache.footprint(query, i).area / total < self.t.min_mask_area_ratio:
                    continue
            out.append((i, det))
        return out

    def counts(self, cache: EvidenceCache, object_id: str) -> tuple[int, int]:
        dets = self._filtered(cache, self._query(object_id))
        strong = sum(1 for _, d in dets if d.score >= self.t.object_sat)
        weak = sum(1 for _, d in dets if d.score >= self.t.object_unc)
        return strong, weak

    def _bind(self, cache: EvidenceCache, object_id: str) -> int | None:
        dets = self._filtered(cache, self._query(object_id))
        if dets and dets[0][1].score >= self.t.object_unc:
            return dets[0][0]
        return None

    def _regions(self, cache: EvidenceCache, object_id: str) -> list[int]:
        dets = self._filtered(cache, self._query(object_id))
        strong = [i for i, d in dets if d.score >= self.t.object_sat]
        if strong:
            return strong
        return [i for i, d in dets if d.score >= self.t.object_unc]

    # -- families --------------------------------------------------------

    def verify_count(self, pred: Predicate, cache: EvidenceCache) -> PredicateState:
        strong, weak = self.counts(cache, pred.subject)
        n = int(pred.expected_value)
        exact = pred.family == COUNT_EXACT
        state = count_state(strong, weak, n, exact)
        if exact:
            score = 1.0 - abs(strong - n) / max(1, n)
        else:
            score = 1.0 - max(0, n - strong) / max(1, n)
        score = min(1.0, max(0.0, score))
        return PredicateState(state, score, f"strong={strong} weak={weak} target={n}",
                              {"strong": strong, "weak": weak, "target": n})

    def verify_attribute(self, pred: Predicate, cache: EvidenceCache, phase: str = "early") -> PredicateState:
        regions = self._regions(cache, pred.subject)
        if not regions:
            return PredicateState(UNCERTAIN, None, "no-region")
        query = self._query(pred.subject)
        text = attribute_query(pred, self.program)
        scores = [cache.region_score(cache.detection_region(query, i), text) for i in regions]
        if any(s is None for s in scores):
            return PredicateState(UNCERTAIN, None, "scorer-unavailable")
        score = min(scores)
        action = pred.attribute_name == "action"
        sat, unc = (self.t.action_sat, self.t.action_unc) if action else (self.t.attribute_sat, self.t.attribute_unc)
        state = state_from_score(score, sat, unc)
        evidence = {"regions": len(regions), "query": text}
        if action and phase == "late" and state != SATISFIED and self.crop_verifier is not None:
            fp = cache.footprint(query, regions[0])
            try:
                verdict = self.crop_verifier(cache.image, fp.box, text)
            except BackendFailure:
                return PredicateState(state, score, "crop-verifier-failed", evidence)
            if verdict in STATES:
                return PredicateState(verdict, score, "crop-verifier", evidence)
        return PredicateState(state, score, "region-min", evidence)

    def verify_relation(self, pred: Predicate, cache: EvidenceCache) -> PredicateState:
        name = pred.relation_name
        if name == OTHER or name not in RELATIONS:
            return PredicateState(UNCERTAIN, None, f"unsupported-relation:{pred.raw_name or name}")
        si = self._bind(cache, pred.subject)
        ri = self._bind(cache, pred.reference)
        if si is None or ri is None:
            return PredicateState(UNCERTAIN, 0.0, "unbound")
        depth = name in DEPTH_RELATIONS
        sub = cache.footprint(self._query(pred.subject), si, with_depth=depth)
        ref = cache.footprint(self._query(pred.reference), ri, with_depth=depth)
        try:
            rs = score_relation(name, sub, ref, cache.width, cache.height, self.larger_depth_is_nearer)
        except DegenerateMask:
            return PredicateState(UNCERTAIN, 0.0, "degenerate-mask")
        state = state_from_score(rs.value, self.t.relation_sat, self.t.relation_unc)
        return PredicateState(state, rs.value, "relation-score", {k: round(v, 6) for k, v in rs.terms.items()})

    def _positive_queries(self) -> list[str]:
        return [o.query for o in self.program.positive_objects()]

    def verify_scene(self, pred: Predicate, cache: EvidenceCache) -> PredicateState:
        text = scene_query(pred)
        total = cache.width * cache.height
        best = None
        for i, det in enumerate(cache.detections(text)):
            area = cache.footprint(text, i).area
            if area / total >= self.t.min_background_ratio and (best is None or area > best[1]):
                best = (i, area)
        if best is not None:
            score = cache.region_score(cache.detection_region(text, best[0]), text)
            note = "scene-region"
        else:
            full = cache.region_score(cache.full_region(), text)
            residual = cache.region_score(cache.residual_background(self._positive_queries(), self.t.object_unc), text)
            score = None if full is None or residual is None else 0.5 * (full + residual)
            note = "full+residual"
        if score is None:
            return PredicateState(UNCERTAIN, None, "scorer-unavailable")
        return PredicateState(state_from_score(score, self.t.attribute_sat, self.t.attribute_unc), score, note)

    def verify_exclusion(self, pred: Predicate, cache: EvidenceCache) -> PredicateState:
        query = self._query(pred.subject)
        positives = []
        for o in self.program.positive_objects():
            if o.object_id == pred.subject:
                continue
            for i, det in self._filtered(cache, o.query):
                if det.score >= self.t.object_unc:
                    positives.append(cache.footprint(o.query, i).mask)
        best = 0.0
        ignored = 0
        for i, det in self._filtered(cache, query):
            mask = cache.footprint(query, i).mask
            if any(mask_metrics(mask, pm)[0] >= self.t.exclusion_overlap_iou for pm in positives):
                ignored += 1
                continue
            best = max(best, det.score)
        state = exclusion_state(best, self.t)
        return PredicateState(state, 1.0 - best, f"max-survivor={best:.3f}", {"ignored": ignored})

    def verify_text(self, pred: Predicate, image: Any) -> PredicateState:
        if self.text_verifier is None:
            return PredicateState(UNCERTAIN, None, "no-text-verifier")
        try:
            verdict = self.text_verifier(image, str(pred.expected_value))
        except BackendFailure as exc:
            return PredicateState(UNCERTAIN, None, f"backend-failure:{exc}")
        if verdict not in STATES:
            return PredicateState(UNCERTAIN, None, f"bad-verdict:{verdict}")
        return PredicateState(verdict, VERDICT_SCORE[verdict], "text-verifier")

    def verify_predicate(self, pred: Predicate, cache: EvidenceCache, phase: str = "early") -> PredicateState:
        if pred.family in COUNT_FAMILIES:
            return self.verify_count(pred, cache)
        if pred.family == ATTRIBUTE:
            return self.verify_attribute(pred, cache, phase)
        if pred.family == RELATION:
            return self.verify_relation(pred, cache)
        if pred.family == GLOBAL_SCENE:
            return self.verify_scene(pred, cache)
        if pred.family == EXCLUSION:
            return self.verify_exclusion(pred, cache)
        if pred.family == VISIBLE_TEXT:
            return self.verify_text(pred, cache.image)
        raise ValueError(pred.family)

    def verify_program(self, cache: EvidenceCache, phase: str = "auto", round_index: int = 0) -> StateVector:
        """Evaluate every predicate in program order.

        ``auto`` runs the early pass and re-checks action attributes in the
        late pass once they are the only blocking predicates.
        """
        first = "early" if phase == "auto" else phase
        states = {p.predicate_id: self.verify_predicate(p, cache, first) for p in self.program.predicates}
        if phase == "auto":
            blocking = [p for p in self.program.predicates if states[p.predicate_id].state != SATISFIED]
            if blocking and all(is_action(p) for p in blocking):
                for p in blocking:
                    states[p.predicate_id] = self.verify_predicate(p, cache, "late")
        return StateVector(round_index, states)


def is_action(pred: Predicate) -> bool:
    return pred.family == ATTRIBUTE and pred.attribute_name == "action"


def blocking_ids(states: StateVector, order: Iterable[str] | None = None) -> list[str]:
    ids = list(order) if order is not None else list(states.states)
    return [pid for pid in ids if states[pid].state != SATISFIED]
