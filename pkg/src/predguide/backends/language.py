"""A small prompt language for synthetic mode: parser, rewriter, reviewer and suite generator.

Prompts are clauses joined by "; ", for example::

    two red dogs; a cat; the dog is to the left of the cat; no bird; in a forest

The parser turns such a prompt into parser buckets without any model. The
suite generator only emits prompts the parser understands.
"""

from __future__ import annotations

import re
from typing import Any, Mapping, Sequence

import numpy as np

from ..errors import MalformedInput
from ..normalize import RELATION_SYNONYMS
from . import UsageMeter

NUMBER_WORDS = {"one": 1, "two": 2, "three": 3, "four": 4, "five": 5, "six": 6}
WORD_FOR = {v: k for k, v in NUMBER_WORDS.items()}

NOUNS = ("dog", "cat", "bird", "car", "chair", "cup", "apple", "ball", "book", "lamp", "bottle", "clock",
         "vase", "horse", "kite", "plate")
ANIMATE = ("dog", "cat", "bird", "horse")
COLORS = ("red", "blue", "green", "yellow", "black", "white")
MATERIALS = ("wooden", "metal", "glass", "plastic")
PATTERNS = ("striped", "spotted", "checkered")
SHAPES = ("round", "square", "triangular")
POSES = ("sitting", "standing", "lying")
STATES = ("open", "closed", "broken", "wet", "empty", "full")
ACTIONS = ("chasing", "watching", "holding")
SCENES = ("forest", "beach", "kitchen", "street", "park", "desert")
TIMES = ("night", "sunset", "dawn", "noon")
SEASONS = ("winter", "summer", "autumn", "spring")
TEXTS = ("OPEN", "SALE", "HELLO", "CAFE", "EXIT")

RELATION_RENDER = {
    "left": "to the left of", "right": "to the right of", "above": "above", "below": "below",
    "near": "near", "on": "on", "in_front_of": "in front of", "behind": "behind", "inside": "inside",
    "in": "in", "overlapping": "overlapping",
}

_REL_ALTS = "|".join(re.escape(k) for k in sorted(RELATION_SYNONYMS, key=len, reverse=True))
_RELATION = re.compile(rf"^the (.+?) is ({_REL_ALTS}) the (.+)$")
_ACTION = re.compile(r"^the (.+?) is (\w+ing) the (.+)$")
_IS = re.compile(r"^the (.+?) is (\w+)$")
_NO = re.compile(r"^no (.+)$")
_TEXT = re.compile(r'^with the text "(.*)"$')
_WHERE = re.compile(r"^(?:in|at|on) (?:a |an |the )?(.+)$")
_COUNT = re.compile(r"^(?:(exactly|at least) )?(a|an|\d+|one|two|three|four|five|six) (.+)$")


def singular(word: str) -> str:
    if word.endswith("s") and not word.endswith("ss") and len(word) > 3:
        return word[:-1]
    return word


def plural(word: str, n: int) -> str:
    return word if n == 1 else word + "s"


def classify_adjective(word: str) -> str:
    if word in MATERIALS:
        return "material"
    if word in PATTERNS:
        return "pattern"
    if word in SHAPES:
        return "shape"
    if word in STATES:
        return "state"
    return "color"


class _Builder:
    def __init__(self) -> None:
        self.objects: list[dict[str, Any]] = []
        self.ids: dict[str, str] = {}
        self.buckets: dict[str, list] = {
            "at_least_count_constraints": [], "exact_count_constraints": [], "exclusion_constraints": [],
            "relation_constraints": [], "attribute_constraints": [], "global_scene_constraints": [],
            "text_constraints": [],
        }

    def obj(self, label: str) -> str:
        label = label.strip()
        if label not in self.ids:
            oid = f"o{len(self.ids) + 1}"
            self.ids[label] = oid
            self.objects.append({"object_id": oid, "label": label, "proposal_text": label, "aliases": []})
        return self.ids[label]

    def doc(self, prompt: str) -> dict[str, Any]:
        return {"source_prompt": prompt, "objects": self.objects, **self.buckets}


def parse_prompt(prompt: str) -> dict[str, Any]:
    """Parser buckets for a prompt in the synthetic language."""
    if not prompt or not prompt.strip():
        raise MalformedInput("empty prompt")
    b = _Builder()
    for raw in prompt.split(";"):
        clause = " ".join(raw.strip().rstrip(".").split())
        if not clause:
            continue
        low = clause.lower()
        if m := _TEXT.match(clause):
            b.buckets["text_constraints"].append({"text": m.group(1), "object_id": None})
        elif m := _RELATION.match(low):
            sub, ref = b.obj(singular(m.group(1))), b.obj(singular(m.group(3)))
            b.buckets["relation_constraints"].append(
                {"subject_id": sub, "relation": RELATION_SYNONYMS[m.group(2)], "reference_id": ref})
        elif m := _ACTION.match(low):
            sub, ref = b.obj(singular(m.group(1))), b.obj(singular(m.group(3)))
            b.buckets["attribute_constraints"].append(
                {"object_id": sub, "attribute": "action", "value": m.group(2), "target_id": ref})
        elif m := _IS.match(low):
            sub = b.obj(singular(m.group(1)))
            value = m.group(2)
            name = "pose" if value in POSES else "action" if value.endswith("ing") else "state"
            b.buckets["attribute_constraints"].append({"object_id": sub, "attribute": name, "value": value})
        elif m := _NO.match(low):
            b.buckets["exclusion_constraints"].append({"object_id": b.obj(singular(m.group(1)))})
        elif m := _COUNT.match(low):
            qualifier, amount, rest = m.groups()
            words = rest.split()
            n = 1 if amount in ("a", "an") else NUMBER_WORDS.get(amount) or int(amount)
            label = singular(words[-1]) if n != 1 or words[-1] not in NOUNS else words[-1]
            oid = b.obj(label)
            at_least = qualifier == "at least" or amount in ("a", "an")
            bucket = "at_least_count_constraints" if at_least else "exact_count_constraints"
            b.buckets[bucket].append({"object_id": oid, "count": n})
            for adj in words[:-1]:
                b.buckets["attribute_constraints"].append(
                    {"object_id": oid, "attribute": classify_adjective(adj), "value": adj})
        elif m := _WHERE.match(low):
            value = m.group(1)
            name = "time_of_day" if value in TIMES else "season" if value in SEASONS else "scene"
            b.buckets["global_scene_constraints"].append({"attribute": name, "value": value})
        else:
            raise MalformedInput(f"cannot parse clause {clause!r}")
    return b.doc(prompt)


def rewrite_prompt(prompt: str, n: int) -> list[str]:
    """Clause reorderings and neutral framings; meaning is unchanged."""
    clauses = [c.strip() for c in prompt.split(";") if c.strip()]
    out: list[str] = []
    frames = ("{}", "A photo with {}", "Show {}")
    for frame in frames:
        for k in range(len(clauses)):
            rotated = clauses[k:] + clauses[:k]
            text = frame.format("; ".join(rotated))
            if text != prompt and text not in out:
                out.append(text)
        rev = "; ".join(reversed(clauses))
        text = frame.format(rev)
        if text != prompt and text not in out:
            out.append(text)
    return out[:n]


def generate_suite(n: int, seed: int = 0) -> list[str]:
    """Random prompts in the synthetic language; every layout they ask for is realizable."""
    rng = np.random.default_rng(seed)
    prompts = []
    for _ in range(n):
        prompts.append(_sample_prompt(rng))
    return prompts


def _pick(rng: np.random.Generator, seq: Sequence[str]) -> str:
    return seq[int(rng.integers(len(seq)))]


def _sample_prompt(rng: np.random.Generator) -> str:
    k = int(rng.choice([1, 2, 2, 3, 3]))
    nouns = [str(x) for x in rng.choice(NOUNS, size=k + 1, replace=False)]
    objects, spare = nouns[:k], nouns[k]
    clauses = []
    for noun in objects:
        r = rng.random()
        if r < 0.5:
            qual, n = "", 1
            amount = "an" if noun[0] in "aeiou" else "a"
        elif r < 0.85:
            n = int(rng.integers(1, 4))
            qual, amount = "", WORD_FOR[n]
        else:
            n = int(rng.integers(2, 4))
            qual, amount = "at least ", WORD_FOR[n]
        adjs = []
        a = rng.random()
        if a < 0.45:
            adjs.append(_pick(rng, COLORS))
        elif a < 0.6:
            adjs.append(_pick(rng, MATERIALS))
        elif a < 0.7:
            adjs.append(_pick(rng, PATTERNS))
        words = adjs + [plural(noun, n)]
        if amount in ("a", "an") and adjs:
            amount = "an" if adjs[0][0] in "aeiou" else "a"
        clauses.append(f"{qual}{amount} {' '.join(words)}")
    if k >= 2 and rng.random() < 0.6:
        rel = _pick(rng, ("left", "right", "above", "below", "near", "on", "in_front_of", "behind"))
        clauses.append(f"the {objects[0]} is {RELATION_RENDER[rel]} the {objects[1]}")
        if k == 3 and rng.random() < 0.3:
            rel2 = _pick(rng, ("left", "right", "near"))
            clauses.append(f"the {objects[2]} is {RELATION_RENDER[rel2]} the {objects[1]}")
    for noun in objects:
        if noun in ANIMATE and rng.random() < 0.15:
            clauses.append(f"the {noun} is {_pick(rng, POSES)}")
    if rng.random() < 0.25:
        clauses.append(f"no {spare}s")
    if rng.random() < 0.3:
        clauses.append(f"in a {_pick(rng, SCENES)}")
    if rng.random() < 0.1:
        clauses.append(f'with the text "{_pick(rng, TEXTS)}"')
    return "; ".join(clauses)


class SyntheticLanguage:
    """MLLM text roles backed by the prompt language, with token accounting."""

    def __init__(self, meter: UsageMeter):
        self.meter = meter

    def _usage(self, role: str, payload: str, reply: str) -> None:
        self.meter.record_mllm(role, 300 + len(payload.split()), 4 + len(reply.split()), 0)

    def parser(self, prompt: str) -> dict[str, Any]:
        doc = parse_prompt(prompt)
        self._usage("parser", prompt, str(doc))
        return doc

    def rewriter(self, prompt: str, n: int) -> list[str]:
        out = rewrite_prompt(prompt, n)
        self._usage("rewriter", prompt, " ".join(out))
        return out

    def reviewer(self, prompt: str, report: Mapping[str, Any], candidate: Mapping[str, Any]) -> dict[str, Any]:
        self._usage("reviewer", prompt + str(report), str(candidate))
        return dict(candidate)
