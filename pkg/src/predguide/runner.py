"""Batch orchestration: compile, refine, log and aggregate costs per prompt."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

from .backends import BackendSuite, UsageMeter
from .backends.language import SyntheticLanguage
from .backends.mllm import HTTPTransport, MLLMClient, ScriptedTransport, load_script
from .backends.synthetic import SyntheticWorld
from .config import RunConfig
from .controller import POLICIES, run_refinement
from .errors import InvalidReviewedProgram, MalformedInput, PredguideError
from .normalize import NormalizationReport, apply_review, normalize, review_gate
from .program import VisualProgram, compile_program, to_document
from .rewrites import build_pool


@dataclass
class Compiled:
    program: VisualProgram
    report: NormalizationReport
    reviewed: bool
    review_error: str | None = None
    review_report: NormalizationReport | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "program": to_document(self.program),
            "normalization": self.report.to_dict(),
            "reviewed": self.reviewed,
            "review_error": self.review_error,
            "review_normalization": None if self.review_report is None else self.review_report.to_dict(),
        }


@dataclass
class Roles:
    """The text-side MLLM roles used before refinement starts."""

    parser: Callable[[str], Mapping[str, Any]]
    rewriter: Callable[[str, int], Sequence[str]]
    reviewer: Callable[[str, Mapping[str, Any], Mapping[str, Any]], Mapping[str, Any]]


def compile_prompt(prompt: str, roles: Roles) -> Compiled:
    """Parse, compile, normalize and run the gated review at most once."""
    if not prompt or not prompt.strip():
        raise MalformedInput("empty prompt")
    parsed = dict(roles.parser(prompt))
    parsed.setdefault("source_prompt", prompt)
    program, report = normalize(compile_program(parsed, strict=False))
    if not review_gate(report):
        return Compiled(program, report, False)
    candidate = to_document(program)
    try:
        reviewed = roles.reviewer(prompt, report.to_dict(), candidate)
        final, second = apply_review(program, reviewed)
    except (InvalidReviewedProgram, PredguideError) as exc:
        return Compiled(program, report, True, review_error=str(exc))
    return Compiled(final, report, True, review_report=second)


def _mllm_client(config: RunConfig, meter: UsageMeter) -> MLLMClient:
    if config.mode == "scripted":
        if not config.script_path:
            raise MalformedInput("scripted mode needs script_path")
        return MLLMClient(ScriptedTransport(load_script(config.script_path)), meter)
    return MLLMClient(HTTPTransport(config.endpoint), meter)


def _roles(config: RunConfig, meter: UsageMeter) -> Roles:
    if config.mode == "synthetic":
        lang = SyntheticLanguage(meter)
        return Roles(lang.parser, lang.rewriter, lang.reviewer)
    client = _mllm_client(config, meter)
    return Roles(client.parse, client.rewrite, client.review)


def _backends(program: VisualProgram, config: RunConfig, meter: UsageMeter) -> BackendSuite:
    if config.mode == "live":
        from .backends.http import ImageService, http_suite

        if not config.endpoint.image_service_url:
            raise MalformedInput("live mode needs endpoint.image_service_url")
        service = ImageService(config.endpoint.image_service_url, config.endpoint.timeout,
                               confidence=config.thresholds.detector_confidence)
        return http_suite(service, _mllm_client(config, meter), meter)
    # synthetic and scripted modes share the symbolic image world
    world = SyntheticWorld(program, config.noise, config.thresholds, meter)
    return world.suite(meter)


def run_prompt(prompt: str, config: RunConfig, policy: str = "full", index: int = 0) -> dict[str, Any]:
    """One prompt end to end; failures are recorded instead of raised."""
    meter = UsageMeter()
    log: dict[str, Any] = {"index": index, "prompt": prompt, "policy": policy, "budget": config.budget,
                           "seed": config.seed}
    try:
        roles = _roles(config, meter)
        compiled = compile_prompt(prompt, roles)
        log.update(compiled.to_dict())
        compile_cost = meter.snapshot()
        rewrites = [] if policy == "no_rewrites" else roles.rewriter(prompt, config.rewrites)
        pool = build_pool(prompt, rewrites, config.rewrites)
        backends = _backends(compiled.program, config, meter)
        pre_loop = meter.snapshot()
        result = run_refinement(
            compiled.program, pool, backends, config.budget, config.seed,
            policy="full" if policy == "no_rewrites" else policy,
            thresholds=config.thresholds, larger_depth_is_nearer=config.larger_depth_is_nearer,
        )
    except PredguideError as exc:
        log.update({"status": "error", "error": f"{type(exc).__name__}: {exc}"})
        log["totals"] = meter.snapshot().to_dict()
        return log
    totals = meter.snapshot()
    log.update({
        "rewrites": pool.to_dict(),
        "rounds": [r.to_dict() for r in result.history.rounds],
        "targeting": result.history.to_dict()["targeting"],
        "status": result.status,
        "final_round": result.round,
        "exec": result.executions,
        "compile_cost": compile_cost.to_dict(),
        "setup_cost": (pre_loop - compile_cost).to_dict(),
        "totals": totals.to_dict(),
        "reviewer_calls": meter.calls_for("reviewer"),
        "auditor_calls": meter.calls_for("auditor"),
    })
    return log


def run_batch(prompts: Sequence[str], config: RunConfig, policy: str = "full") -> tuple[list[dict], dict]:
    if policy not in POLICIES:
        raise MalformedInput(f"unknown policy {policy!r}")
    jobs = list(enumerate(prompts))
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            logs = list(pool.map(lambda job: run_prompt(job[1], config, policy, job[0]), jobs))
    else:
        logs = [run_prompt(p, config, policy, i) for i, p in jobs]
    logs.sort(key=lambda log: log["index"])
    return logs, aggregate(logs)


def _mean(values: Iterable[float]) -> float:
    values = list(values)
    return sum(values) / len(values) if values else 0.0


def aggregate(logs: Sequence[Mapping[str, Any]]) -> dict[str, Any]:
    """Means over completed prompts; recomputable from the logs alone."""
    done = [log for log in logs if log.get("status") in ("accepted", "fallback")]
    totals = [log["totals"] for log in done]
    return {
        "prompts": len(logs),
        "errors": len(logs) - len(done),
        "accept_rate": round(_mean(1.0 if log["status"] == "accepted" else 0.0 for log in done), 6),
        "fallback_rate": round(_mean(1.0 if log["status"] == "fallback" else 0.0 for log in done), 6),
        "exec": round(_mean(t["image_execs"] for t in totals), 6),
        "calls": round(_mean(t["mllm_calls"] for t in totals), 6),
        "ktok_in": round(_mean(t["tokens_in"] for t in totals) / 1000.0, 1),
        "ktok_out": round(_mean(t["tokens_out"] for t in totals) / 1000.0, 1),
        "image_inputs": round(_mean(t["image_inputs"] for t in totals), 6),
    }


def ablate(prompts: Sequence[str], config: RunConfig, variants: Sequence[str] = POLICIES) -> dict[str, dict]:
    return {v: run_batch(prompts, config, v)[1] for v in variants}


def dumps(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_outputs(out_dir: str | Path, logs: Sequence[Mapping[str, Any]], metrics: Mapping[str, Any],
                  name: str = "metrics.json") -> None:
    out = Path(out_dir)
    (out / "logs").mkdir(parents=True, exist_ok=True)
    for log in logs:
        suffix = "" if log.get("policy", "full") == "full" else f".{log['policy']}"
        (out / "logs" / f"{log['index']:04d}{suffix}.json").write_text(dumps(log), encoding="utf-8")
    (out / name).write_text(dumps(metrics), encoding="utf-8")


def read_prompts(path: str | Path) -> list[str]:
    """One prompt per line, UTF-8; blank lines are skipped."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise MalformedInput(f"prompt file {path}: {exc}") from exc
    return [line.strip() for line in text.splitlines() if line.strip()]


def load_logs(out_dir: str | Path) -> list[dict[str, Any]]:
    logs = []
    for path in sorted((Path(out_dir) / "logs").glob("*.json")):
        logs.append(json.loads(path.read_text(encoding="utf-8")))
    return logs


def with_overrides(config: RunConfig, **kw: Any) -> RunConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
