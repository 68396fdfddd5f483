"""Backends that read precomputed evidence from a JSON document.

Evidence layout::

    {
      "width": 64, "height": 64,
      "detections": {"dog": [{"score": 0.9, "box": [x0, y0, x1, y1], "mask": "0,10,1,4,..."}]},
      "region_scores": [{"region": "det:dog:0", "text": "red dog", "score": 0.8}],
      "depth": {"values": [...]} ,
      "texts": {"OPEN": "satisfied"}
    }

Region keys are ``full``, ``background`` or ``det:<query>:<index>``. Lookups
that are absent behave like an unavailable backend.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Mapping

import jsonschema
import numpy as np

from ..errors import BackendFailure, SchemaViolation
from ..evidence import Detection, EvidenceCache, Region, mask_from_rle
from ..states import STATES

EVIDENCE_SCHEMA = {
    "type": "object",
    "required": ["width", "height", "detections"],
    "properties": {
        "width": {"type": "integer", "minimum": 1},
        "height": {"type": "integer", "minimum": 1},
        "detections": {
            "type": "object",
            "additionalProperties": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["score", "box"],
                    "properties": {
                        "score": {"type": "number", "minimum": 0, "maximum": 1},
                        "box": {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4},
                        "mask": {"type": ["string", "array", "null"]},
                    },
                },
            },
        },
        "region_scores": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["region", "text", "score"],
                "properties": {
                    "region": {"type": "string"},
                    "text": {"type": "string"},
                    "score": {"type": "number", "minimum": 0, "maximum": 1},
                },
            },
        },
        "depth": {
            "type": ["object", "null"],
            "properties": {"values": {"type": "array"}},
        },
        "texts": {"type": "object", "additionalProperties": {"enum": list(STATES)}},
    },
}


class OfflineEvidence:
    def __init__(self, doc: Mapping[str, Any], confidence: float = 0.30):
        try:
            jsonschema.validate(doc, EVIDENCE_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise SchemaViolation(f"evidence: {exc.message}") from exc
        self.width = int(doc["width"])
        self.height = int(doc["height"])
        self.confidence = confidence
        self._detections: dict[str, list[Detection]] = {}
        for query, items in doc["detections"].items():
            dets = []
            for d in items:
                mask = None
                if d.get("mask"):
                    try:
                        mask = mask_from_rle(d["mask"], self.width, self.height)
                    except ValueError as exc:
                        raise SchemaViolation(f"evidence mask for {query!r}: {exc}") from exc
                dets.append(Detection(query, float(d["score"]), tuple(float(v) for v in d["box"]), mask))
            self._detections[query.lower()] = dets
        self._scores = {(r["region"], r["text"]): float(r["score"]) for r in doc.get("region_scores", [])}
        self._texts = dict(doc.get("texts", {}))
        self._depth = None
        if doc.get("depth"):
            try:
                self._depth = np.asarray(doc["depth"]["values"], dtype=np.float64).reshape(self.height, self.width)
            except (KeyError, ValueError) as exc:
                raise SchemaViolation(f"evidence depth: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> OfflineEvidence:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise SchemaViolation(f"evidence {path}: {exc}") from exc
        return cls(doc)

    def detect(self, image: Any, query: str) -> list[Detection]:
        return [d for d in self._detections.get(query.lower(), []) if d.score >= self.confidence]

    def region_score(self, image: Any, region: Region, text: str) -> float:
        key = (region.key, text)
        if key not in self._scores:
            raise BackendFailure(f"no region score for {key}")
        return self._scores[key]

    def depth(self, image: Any) -> np.ndarray | None:
        return self._depth

    def text_verifier(self, image: Any, text: str) -> str:
        if text not in self._texts:
            raise BackendFailure(f"no text verdict for {text!r}")
        return self._texts[text]

    def cache(self) -> EvidenceCache:
        return EvidenceCache(self, self.width, self.height, self.detect, self.region_score, self.depth)
