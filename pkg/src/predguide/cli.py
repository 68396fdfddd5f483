"""Command line entry point: compile, verify, run, ablate, report."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

from .backends import UsageMeter
from .backends.offline import OfflineEvidence
from .config import load_config
from .controller import POLICIES, program_gate
from .errors import MalformedInput, PredguideError, SchemaViolation
from .program import parse_program
from .runner import (
    _roles, ablate, aggregate, compile_prompt, dumps, load_logs, read_prompts, run_batch, write_outputs,
)
from .verifier import PredicateVerifier


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON or YAML run config")
    p.add_argument("--mode", choices=("synthetic", "scripted", "live"))
    p.add_argument("--seed", type=int)
    p.add_argument("--budget", type=int)
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="predguide", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    c = sub.add_parser("compile", help="compile and normalize one prompt")
    c.add_argument("prompt", nargs="?", help="prompt text")
    c.add_argument("--file", help="read the prompt from a file")
    _common(c)

    v = sub.add_parser("verify", help="verify a program against an evidence file")
    v.add_argument("program")
    v.add_argument("evidence")
    _common(v)

    r = sub.add_parser("run", help="refine every prompt in a file")
    r.add_argument("prompts", help="one prompt per line")
    r.add_argument("--policy", choices=POLICIES, default="full")
    _common(r)

    a = sub.add_parser("ablate", help="compare policy variants on the same prompts")
    a.add_argument("prompts")
    a.add_argument("--variants", nargs="+", choices=POLICIES, default=list(POLICIES))
    _common(a)

    rep = sub.add_parser("report", help="recompute metrics from a run directory")
    rep.add_argument("run_dir")
    return parser


def _config(args: argparse.Namespace):
    return load_config(
        getattr(args, "config", None),
        mode=getattr(args, "mode", None),
        seed=getattr(args, "seed", None),
        budget=getattr(args, "budget", None),
        out_dir=getattr(args, "out", None),
    )


def _emit(doc, out: str | None, name: str) -> None:
    text = dumps(doc)
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / name).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def cmd_compile(args: argparse.Namespace) -> int:
    cfg = _config(args)
    if args.file:
        prompt = Path(args.file).read_text(encoding="utf-8").strip()
    else:
        prompt = args.prompt or ""
    meter = UsageMeter()
    compiled = compile_prompt(prompt, _roles(cfg, meter))
    doc = compiled.to_dict()
    doc["cost"] = meter.snapshot().to_dict()
    _emit(doc, cfg.out_dir, "program.json")
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    cfg = _config(args)
    try:
        program = parse_program(Path(args.program).read_bytes())
    except OSError as exc:
        raise MalformedInput(str(exc)) from exc
    evidence = OfflineEvidence.load(args.evidence)
    verifier = PredicateVerifier(program, cfg.thresholds, evidence.text_verifier, None, cfg.larger_depth_is_nearer)
    states = verifier.verify_program(evidence.cache())
    passed, blocking = program_gate(states)
    doc = {"program_id": program.program_id, "gate_pass": passed, "blocking": list(blocking), **states.to_dict()}
    _emit(doc, cfg.out_dir, "states.json")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _config(args)
    logs, metrics = run_batch(read_prompts(args.prompts), cfg, args.policy)
    if cfg.out_dir:
        write_outputs(cfg.out_dir, logs, metrics)
    sys.stdout.write(dumps(metrics))
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _config(args)
    table = ablate(read_prompts(args.prompts), cfg, args.variants)
    _emit(table, cfg.out_dir, "ablation.json")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    logs = load_logs(args.run_dir)
    if not logs:
        raise MalformedInput(f"no logs under {args.run_dir}")
    by_policy: dict[str, list] = {}
    for log in logs:
        by_policy.setdefault(log.get("policy", "full"), []).append(log)
    rows = {policy: aggregate(group) for policy, group in sorted(by_policy.items())}
    header = f"{'policy':<14}{'n':>5}{'accept':>9}{'exec':>8}{'calls':>8}{'kTok in':>9}{'kTok out':>10}"
    lines = [header]
    for policy, m in rows.items():
        lines.append(f"{policy:<14}{m['prompts']:>5}{m['accept_rate']:>9.3f}{m['exec']:>8.2f}"
                     f"{m['calls']:>8.2f}{m['ktok_in']:>9.1f}{m['ktok_out']:>10.1f}")
    sys.stdout.write("\n".join(lines) + "\n")
    return 0


COMMANDS = {"compile": cmd_compile, "verify": cmd_verify, "run": cmd_run, "ablate": cmd_ablate,
            "report": cmd_report}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.verb](args)
    except (SchemaViolation, MalformedInput) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except PredguideError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except json.JSONDecodeError as exc:
        print(f"error: malformed JSON: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
