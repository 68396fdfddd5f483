"""Refinement state machine: gates, target selection, edit/resample routing and fallback."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from . import instructions as tmpl
from .backends import AuditVerdict, BackendSuite, Usage
from .config import Thresholds
from .errors import BackendFailure, EmptyHistory
from .program import (
    ATTRIBUTE, COUNT_AT_LEAST, COUNT_EXACT, COUNT_FAMILIES, EXCLUSION, GLOBAL_SCENE, RELATION,
    VISIBLE_TEXT, Predicate, VisualProgram,
)
from .rewrites import RewritePool, guard_prompt, next_rewrite, select_initial
from .states import SATISFIED, STATE_RANK, UNCERTAIN, VIOLATED
from .verifier import PredicateVerifier, StateVector

GENERATE = "initial_generate"
EDIT = "edit"
RESAMPLE = "resample"
ACTION_CODE = {GENERATE: 0, EDIT: 1, RESAMPLE: 2}

FAMILY_RANK = {
    COUNT_AT_LEAST: 0, COUNT_EXACT: 0, RELATION: 1, ATTRIBUTE: 2,
    EXCLUSION: 3, GLOBAL_SCENE: 4, VISIBLE_TEXT: 5,
}
SEVERITY = {VIOLATED: 0, UNCERTAIN: 1, SATISFIED: 2}

OVERRIDE_ATTRIBUTES = frozenset({"color", "material", "shape", "pattern", "action", "pose", "state", "size"})
OVERRIDE_RELATIONS = frozenset({"in", "inside", "on"})

POLICIES = ("full", "random_policy", "no_resample", "no_edit", "no_rewrites")

# edit operations
OP_ADD = "add"
OP_REMOVE = "remove"
OP_ATTRIBUTE = "attribute"
OP_SCENE = "scene"
OP_MOVE = "move"
OP_TEXT = "text"


@dataclass(frozen=True)
class Action:
    kind: str
    op: str | None = None
    amount: int = 0
    reason: str = ""


@dataclass(frozen=True)
class Snapshot:
    """Quantities compared by the improvement test."""

    target_rank: int
    satisfied: int
    mean_score: float
    count_gap: int

    def improved_over(self, before: Snapshot) -> bool:
        return (
            self.target_rank > before.target_rank
            or self.satisfied > before.satisfied
            or self.mean_score > before.mean_score
            or self.count_gap < before.count_gap
        )


@dataclass
class TargetEvent:
    round: int
    action: str
    op: str | None
    state: str
    score: float | None
    snapshot: Snapshot


@dataclass
class RoundRecord:
    round: int
    action: str
    target: str | None
    op: str | None
    rewrite_index: int
    seed: int
    instruction: str | None
    states: StateVector
    blocking: tuple[str, ...]
    accepted: bool
    cost: Usage
    failed_calls: int = 0
    override: dict[str, Any] | None = None

    @property
    def scores(self) -> dict[str, float | None]:
        return {pid: s.score for pid, s in self.states.states.items()}

    def to_dict(self) -> dict[str, Any]:
        return {
            "round": self.round,
            "action": self.action,
            "target": self.target,
            "op": self.op,
            "rewrite_index": self.rewrite_index,
            "seed": self.seed,
            "instruction": self.instruction,
            "states": self.states.to_dict()["states"],
            "blocking": list(self.blocking),
            "accepted": self.accepted,
            "override": self.override,
            "failed_calls": self.failed_calls,
            "cost": self.cost.to_dict(),
        }


@dataclass
class History:
    rounds: list[RoundRecord] = field(default_factory=list)
    targeting: dict[str, list[TargetEvent]] = field(default_factory=dict)
    lineage: int = 0
    removal_used: set[int] = field(default_factory=set)
    images: list[Any] = field(default_factory=list, repr=False)

    def __len__(self) -> int:
        return len(self.rounds)

    def append(self, record: RoundRecord, image: Any = None) -> None:
        if self.rounds and record.round != self.rounds[-1].round + 1:
            raise ValueError("round indices must increase by one")
        self.rounds.append(record)
        self.images.append(image)

    def new_lineage(self) -> None:
        """A fresh generation starts a new rewrite lineage; the removal budget resets."""
        self.lineage += 1

    def removal_available(self) -> bool:
        return self.lineage not in self.removal_used

    def log_target(self, pid: str, event: TargetEvent) -> None:
        self.targeting.setdefault(pid, []).append(event)

    def last_targeted(self, pid: str) -> TargetEvent | None:
        events = self.targeting.get(pid)
        return events[-1] if events else None

    def to_dict(self) -> dict[str, Any]:
        return {
            "rounds": [r.to_dict() for r in self.rounds],
            "targeting": {
                pid: [{"round": e.round, "action": e.action, "op": e.op, "state": e.state, "score": e.score}
                      for e in events]
                for pid, events in sorted(self.targeting.items())
            },
        }


# -- gates -------------------------------------------------------------------


def program_gate(states: StateVector) -> tuple[bool, tuple[str, ...]]:
    blocking = tuple(pid for pid, s in states.states.items() if s.state != SATISFIED)
    return not blocking, blocking


def override_family_ok(pred: Predicate) -> bool:
    if pred.family == ATTRIBUTE:
        return pred.attribute_name in OVERRIDE_ATTRIBUTES
    if pred.family == RELATION:
        return pred.relation_name in OVERRIDE_RELATIONS
    return pred.family == GLOBAL_SCENE


def override_eligible(
    blocking: Sequence[str], states: StateVector, history: History, program: VisualProgram
) -> bool:
    """Every blocker is eligible and was also non-satisfied in the previous verified round."""
    if not blocking or not history.rounds:
        return False
    previous = history.rounds[-1].states
    for pid in blocking:
        if not override_family_ok(program.predicate(pid)):
            return False
        if states[pid].state == SATISFIED or pid not in previous.states:
            return False
        if previous[pid].state == SATISFIED:
            return False
    return True


def acceptance_gate(states: StateVector, blocking: Sequence[str], auditor_verdict: bool | None = None) -> bool:
    if not blocking and all(s.state == SATISFIED for s in states.states.values()):
        return True
    return bool(auditor_verdict)


# -- selection and routing ---------------------------------------------------


def target_key(pid: str, states: StateVector, program: VisualProgram) -> tuple:
    s = states[pid]
    score = s.score if s.score is not None else -1.0
    return (SEVERITY[s.state], FAMILY_RANK[program.predicate(pid).family], score, pid)


def select_target(blocking: Iterable[str], states: StateVector, program: VisualProgram) -> str:
    return min(blocking, key=lambda pid: target_key(pid, states, program))


def count_gap(states: StateVector, program: VisualProgram) -> int:
    gap = 0
    for p in program.predicates:
        if p.family not in COUNT_FAMILIES or p.predicate_id not in states.states:
            continue
        strong = states[p.predicate_id].evidence.get("strong", 0)
        n = int(p.expected_value)
        gap += abs(strong - n) if p.family == COUNT_EXACT else max(0, n - strong)
    return gap


def snapshot(pid: str, states: StateVector, program: VisualProgram) -> Snapshot:
    return Snapshot(STATE_RANK[states[pid].state], states.satisfied_count(),
                    round(states.mean_score(), 12), count_gap(states, program))


def _counts_satisfied(object_id: str | None, states: StateVector, program: VisualProgram) -> bool:
    return all(
        states[p.predicate_id].state == SATISFIED
        for p in program.predicates
        if p.family in COUNT_FAMILIES and p.subject == object_id
    )


def _count_split(pred: Predicate, states: StateVector) -> tuple[str, int, int]:
    """("under"|"over"|"ok", amount, weak) for a count predicate."""
    ev = states[pred.predicate_id].evidence
    strong, weak = ev.get("strong", 0), ev.get("weak", 0)
    n = int(pred.expected_value)
    if strong < n:
        return "under", n - strong, weak
    if pred.family == COUNT_EXACT:
        if strong > n:
            return "over", strong - n, weak
        if weak > n:
            return "over", weak - n, weak
    return "ok", 0, weak


def _retry_allowed(pid: str, states: StateVector, program: VisualProgram, history: History) -> bool:
    last = history.last_targeted(pid)
    if last is None:
        return True
    return snapshot(pid, states, program).improved_over(last.snapshot)


def choose_action(pid: str, states: StateVector, program: VisualProgram, history: History) -> Action:
    pred = program.predicate(pid)
    fam = pred.family
    if fam in COUNT_FAMILIES:
        kind, amount, weak = _count_split(pred, states)
        if kind == "under":
            if weak < 1:
                return Action(RESAMPLE, reason="no-visible-support")
            if not _retry_allowed(pid, states, program, history):
                return Action(RESAMPLE, reason="no-improvement")
            return Action(EDIT, OP_ADD, amount)
        if kind == "over":
            if amount == 1 and history.removal_available():
                return Action(EDIT, OP_REMOVE, 1)
            return Action(RESAMPLE, reason="multi-removal" if amount > 1 else "removal-used")
        return Action(RESAMPLE, reason="count-uncertain")
    if fam == RELATION:
        return Action(RESAMPLE, reason="layout")
    if fam == ATTRIBUTE:
        if not _counts_satisfied(pred.subject, states, program):
            return Action(RESAMPLE, reason="object-unstable")
        if not _retry_allowed(pid, states, program, history):
            return Action(RESAMPLE, reason="no-improvement")
        return Action(EDIT, OP_ATTRIBUTE)
    if fam == EXCLUSION:
        required_ok = all(
            states[p.predicate_id].state == SATISFIED for p in program.predicates if p.family in COUNT_FAMILIES
        )
        if required_ok and history.removal_available():
            return Action(EDIT, OP_REMOVE, 1)
        return Action(RESAMPLE, reason="required-unstable" if not required_ok else "removal-used")
    if fam == GLOBAL_SCENE:
        others = [q for q in states.states if q != pid and states[q].state != SATISFIED
                  and program.predicate(q).family != GLOBAL_SCENE]
        if others:
            return Action(RESAMPLE, reason="scene-delayed")
        if not _retry_allowed(pid, states, program, history):
            return Action(RESAMPLE, reason="no-improvement")
        return Action(EDIT, OP_SCENE)
    return Action(RESAMPLE, reason="text")


def edit_op_for(pred: Predicate, states: StateVector) -> tuple[str, int]:
    """Edit operation for a predicate regardless of routing, used by the ablation variants."""
    if pred.family in COUNT_FAMILIES:
        kind, amount, _ = _count_split(pred, states)
        if kind == "over":
            return OP_REMOVE, amount
        return OP_ADD, max(1, amount)
    return {
        EXCLUSION: (OP_REMOVE, 1), RELATION: (OP_MOVE, 0), ATTRIBUTE: (OP_ATTRIBUTE, 0),
        GLOBAL_SCENE: (OP_SCENE, 0), VISIBLE_TEXT: (OP_TEXT, 0),
    }[pred.family]


def build_edit_instruction(pid: str, program: VisualProgram, action: Action) -> str:
    pred = program.predicate(pid)
    if action.op == OP_ADD:
        return tmpl.add_instruction(pred, program, action.amount)
    if action.op == OP_REMOVE:
        return tmpl.remove_instruction(pred, program)
    if action.op == OP_ATTRIBUTE:
        return tmpl.attribute_instruction(pred, program)
    if action.op == OP_SCENE:
        return tmpl.scene_instruction(pred)
    if action.op == OP_MOVE:
        return tmpl.move_instruction(pred, program)
    if action.op == OP_TEXT:
        return tmpl.text_instruction(pred)
    raise ValueError(f"unknown edit op {action.op!r}")


# -- fallback ----------------------------------------------------------------


def fallback_key(record: RoundRecord, program: VisualProgram) -> tuple:
    badness = sorted((5 - FAMILY_RANK[program.predicate(pid).family] for pid in record.blocking), reverse=True)
    return (-record.states.satisfied_count(), badness, -record.states.mean_score(), record.round)


def rank_fallback(history: History, program: VisualProgram) -> int:
    if not history.rounds:
        raise EmptyHistory("no verified rounds to rank")
    best = min(history.rounds, key=lambda r: fallback_key(r, program))
    return best.round


# -- loop --------------------------------------------------------------------


@dataclass
class RefinementResult:
    image: Any
    accepted: bool
    round: int
    history: History
    executions: int

    @property
    def status(self) -> str:
        return "accepted" if self.accepted else "fallback"


def _random_action(pid: str, states: StateVector, program: VisualProgram, rng: np.random.Generator) -> Action:
    if rng.random() < 0.5:
        op, amount = edit_op_for(program.predicate(pid), states)
        return Action(EDIT, op, amount, reason="random")
    return Action(RESAMPLE, reason="random")


def run_refinement(
    program: VisualProgram,
    pool: RewritePool,
    backends: BackendSuite,
    budget: int = 32,
    seed: int = 42,
    *,
    policy: str = "full",
    thresholds: Thresholds | None = None,
    larger_depth_is_nearer: bool = True,
) -> RefinementResult:
    """Generate, verify and refine until accepted or the execution budget runs out."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    verifier = PredicateVerifier(program, thresholds, backends.text_verifier, backends.crop_verifier,
                                 larger_depth_is_nearer)
    rng = np.random.default_rng(seed)
    history = History()
    audited: set[tuple[int, tuple[str, ...]]] = set()
    executions = 0
    current = None

    kind, target, op, instruction = GENERATE, None, None, None
    rewrite = select_initial(pool, program.program_int, seed)
    t = 0
    while True:
        before = backends.meter.snapshot()
        produced = None
        failures = 0
        attempts = 0
        call_seed = seed + 1000 * t + ACTION_CODE[kind]
        while produced is None and executions < budget:
            call_seed = seed + 1000 * t + ACTION_CODE[kind]
            executions += 1
            try:
                if kind == EDIT:
                    produced = backends.edit(current, instruction, call_seed)
                else:
                    produced = backends.generate(guard_prompt(pool[rewrite], pool.source), call_seed)
            except BackendFailure:
                failures += 1
                attempts += 1
                if attempts >= 2:
                    # second failure of the same call: move to the next rewrite
                    kind, op, instruction = RESAMPLE, None, None
                    rewrite = next_rewrite(pool)
                    attempts = 0
        if produced is None:
            break
        if kind != EDIT:
            history.new_lineage()
        current = produced

        cache = backends.make_cache(current)
        states = verifier.verify_program(cache, "auto", t)
        passed, blocking = program_gate(states)
        override = None
        verdict = None
        if not passed and override_eligible(blocking, states, history, program):
            override = {"eligible": True, "auditor_called": False, "approved": False, "reasons": []}
            key = (t, blocking)
            if backends.auditor is not None and key not in audited:
                audited.add(key)
                checks = [tmpl.describe_predicate(program.predicate(pid), program) for pid in blocking]
                override["auditor_called"] = True
                override["checks"] = checks
                try:
                    result: AuditVerdict = backends.auditor(current, pool.source, checks)
                    verdict = bool(result.approved)
                    override["reasons"] = list(result.reasons)
                except BackendFailure as exc:
                    verdict = False
                    override["reasons"] = [f"auditor-failure: {exc}"]
                override["approved"] = verdict
        accepted = acceptance_gate(states, blocking, verdict)
        record = RoundRecord(
            round=t, action=kind, target=target, op=op, rewrite_index=rewrite, seed=call_seed,
            instruction=instruction, states=states, blocking=blocking, accepted=accepted,
            cost=backends.meter.snapshot() - before, failed_calls=failures, override=override,
        )
        history.append(record, current)
        if accepted:
            return RefinementResult(current, True, t, history, executions)
        if executions >= budget:
            break

        if policy == "random_policy":
            target = blocking[int(rng.integers(len(blocking)))]
            action = _random_action(target, states, program, rng)
        else:
            target = select_target(blocking, states, program)
            if policy == "no_edit":
                action = Action(RESAMPLE, reason="policy")
            elif policy == "no_resample":
                op_name, amount = edit_op_for(program.predicate(target), states)
                action = Action(EDIT, op_name, amount, reason="policy")
            else:
                action = choose_action(target, states, program, history)
        history.log_target(target, TargetEvent(t, action.kind, action.op, states[target].state,
                                               states[target].score, snapshot(target, states, program)))
        if action.kind == EDIT:
            kind, op = EDIT, action.op
            instruction = build_edit_instruction(target, program, action)
            if action.op == OP_REMOVE:
                history.removal_used.add(history.lineage)
        else:
            kind, op, instruction = RESAMPLE, None, None
            rewrite = next_rewrite(pool)
        t += 1

    if not history.rounds:
        raise BackendFailure("no candidate could be produced within the budget")
    best = rank_fallback(history, program)
    return RefinementResult(history.images[best], False, best, history, executions)
