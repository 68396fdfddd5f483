"""Capability interfaces, usage accounting and the backend bundle used by the controller."""

from __future__ import annotations

import threading
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Mapping, Sequence

from ..evidence import Detection, EvidenceCache

Generator = Callable[[str, int], Any]
Editor = Callable[[Any, str, int], Any]
Detector = Callable[[Any, str], Sequence[Detection]]
Parser = Callable[[str], Mapping[str, Any]]
Rewriter = Callable[[str, int], Sequence[str]]
Reviewer = Callable[[str, Mapping[str, Any], Mapping[str, Any]], Mapping[str, Any]]
Auditor = Callable[[Any, str, Sequence[str]], "AuditVerdict"]
TextVerifier = Callable[[Any, str], str]
CropVerifier = Callable[[Any, Any, str], str]
RegionScorer = Callable[[Any, Any, str], float]
DepthEstimator = Callable[[Any], Any]
ImageSize = Callable[[Any], "tuple[int, int]"]


@dataclass(frozen=True)
class AuditVerdict:
    approved: bool
    reasons: tuple[str, ...] = ()


@dataclass(frozen=True)
class Usage:
    image_execs: int = 0
    mllm_calls: int = 0
    tokens_in: int = 0
    tokens_out: int = 0
    image_inputs: int = 0

    def __add__(self, other: Usage) -> Usage:
        return Usage(*(a + b for a, b in zip(self.astuple(), other.astuple())))

    def __sub__(self, other: Usage) -> Usage:
        return Usage(*(a - b for a, b in zip(self.astuple(), other.astuple())))

    def astuple(self) -> tuple[int, ...]:
        return (self.image_execs, self.mllm_calls, self.tokens_in, self.tokens_out, self.image_inputs)

    def to_dict(self) -> dict[str, int]:
        return asdict(self)


@dataclass(frozen=True)
class CallRecord:
    role: str
    ok: bool
    usage: Usage
    latency: float


class UsageMeter:
    """Thread-safe accumulator for image executions and MLLM usage."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._total = Usage()
        self.calls: list[CallRecord] = []

    def _add(self, role: str, delta: Usage, ok: bool, latency: float) -> None:
        with self._lock:
            self._total = self._total + delta
            self.calls.append(CallRecord(role, ok, delta, latency))

    def record_exec(self, role: str, ok: bool = True, latency: float = 0.0) -> None:
        self._add(role, Usage(image_execs=1), ok, latency)

    def record_mllm(self, role: str, tokens_in: int, tokens_out: int, image_inputs: int = 0,
                    ok: bool = True, latency: float = 0.0) -> None:
        self._add(role, Usage(mllm_calls=1, tokens_in=tokens_in, tokens_out=tokens_out,
                              image_inputs=image_inputs), ok, latency)

    def snapshot(self) -> Usage:
        with self._lock:
            return self._total

    def calls_for(self, role: str) -> int:
        with self._lock:
            return sum(1 for c in self.calls if c.role == role)


@dataclass
class BackendSuite:
    """Everything a refinement run needs; optional roles may be None."""

    generator: Generator
    editor: Editor
    detector: Detector
    image_size: ImageSize
    region_scorer: RegionScorer | None = None
    depth: DepthEstimator | None = None
    text_verifier: TextVerifier | None = None
    crop_verifier: CropVerifier | None = None
    auditor: Auditor | None = None
    parser: Parser | None = None
    rewriter: Rewriter | None = None
    reviewer: Reviewer | None = None
    meter: UsageMeter = field(default_factory=UsageMeter)

    def generate(self, prompt: str, seed: int) -> Any:
        return self._timed_exec("generator", lambda: self.generator(prompt, seed))

    def edit(self, image: Any, instruction: str, seed: int) -> Any:
        return self._timed_exec("editor", lambda: self.editor(image, instruction, seed))

    def _timed_exec(self, role: str, call: Callable[[], Any]) -> Any:
        start = time.perf_counter()
        try:
            out = call()
        except Exception:
            self.meter.record_exec(role, ok=False, latency=time.perf_counter() - start)
            raise
        self.meter.record_exec(role, ok=True, latency=time.perf_counter() - start)
        return out

    def make_cache(self, image: Any) -> EvidenceCache:
        width, height = self.image_size(image)
        return EvidenceCache(image, width, height, self.detector, self.region_scorer, self.depth)


__all__ = [
    "AuditVerdict", "BackendSuite", "CallRecord", "Usage", "UsageMeter",
]
