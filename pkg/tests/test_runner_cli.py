import json
from dataclasses import replace

import pytest

from predguide.backends import UsageMeter
from predguide.backends.language import SyntheticLanguage, generate_suite
from predguide.cli import main
from predguide.config import ABLATION_NOISE, RunConfig
from predguide.errors import MalformedInput
from predguide.normalize import normalize
from predguide.program import compile_program, to_document
from predguide.runner import (
    Roles, ablate, aggregate, compile_prompt, dumps, load_logs, read_prompts, run_batch, run_prompt,
    write_outputs,
)


def roles(meter=None):
    lang = SyntheticLanguage(meter or UsageMeter())
    return Roles(lang.parser, lang.rewriter, lang.reviewer)


def test_compile_prompt_clean_skips_review():
    meter = UsageMeter()
    compiled = compile_prompt("two dogs on a sofa", roles(meter))
    assert not compiled.reviewed and meter.calls_for("reviewer") == 0
    assert compiled.program.program_id


def test_compile_prompt_reviews_at_most_once():
    # a parser that emits a dangling reference forces a semantic fix and the review gate
    def parser(prompt):
        return {"objects": [{"object_id": "dog", "label": "dog"}],
                "relation_constraints": [{"subject_id": "dog", "relation": "near", "reference_id": "ghost"}],
                "at_least_count_constraints": [{"object_id": "dog", "count": 1}]}

    calls = []

    def reviewer(prompt, report, candidate):
        calls.append(prompt)
        return candidate

    compiled = compile_prompt("a dog", Roles(parser, lambda p, k: [], reviewer))
    assert compiled.reviewed and len(calls) == 1 and compiled.review_error is None


def test_compile_prompt_bad_review_keeps_candidate():
    def parser(prompt):
        return {"objects": [{"object_id": "dog", "label": "dog"}],
                "relation_constraints": [{"subject_id": "dog", "relation": "near", "reference_id": "ghost"}]}

    compiled = compile_prompt("a dog", Roles(parser, lambda p, k: [], lambda *a: {"objects": "nope"}))
    assert compiled.reviewed and compiled.review_error
    # the normalized candidate survives a review that fails validation
    candidate, _ = normalize(compile_program(dict(parser("a dog"), source_prompt="a dog"), strict=False))
    assert compiled.program == candidate


def test_compile_prompt_rejects_empty():
    with pytest.raises(MalformedInput):
        compile_prompt("   ", roles())


def test_run_prompt_log_shape():
    log = run_prompt("a red ball next to a dog", RunConfig(budget=4))
    assert log["status"] in ("accepted", "fallback")
    assert log["exec"] <= 4 and log["totals"]["image_execs"] == log["exec"]
    assert log["reviewer_calls"] <= 1
    assert json.loads(dumps(log)) == log


def test_run_prompt_records_errors():
    log = run_prompt("", RunConfig())
    assert log["status"] == "error" and log["error"].startswith("MalformedInput")


def test_run_batch_is_deterministic():
    prompts = generate_suite(12, seed=3)
    cfg = RunConfig(budget=6, noise=ABLATION_NOISE)
    a = run_batch(prompts, cfg)
    b = run_batch(prompts, replace(cfg, workers=3))
    assert dumps(a[0]) == dumps(b[0]) and dumps(a[1]) == dumps(b[1])


def test_aggregate_counts_errors():
    logs = [
        {"status": "accepted", "totals": {"image_execs": 2, "mllm_calls": 4, "tokens_in": 1000, "tokens_out": 500,
                                          "image_inputs": 2}},
        {"status": "fallback", "totals": {"image_execs": 4, "mllm_calls": 6, "tokens_in": 3000, "tokens_out": 1500,
                                          "image_inputs": 4}},
        {"status": "error", "totals": {}},
    ]
    m = aggregate(logs)
    assert (m["prompts"], m["errors"], m["accept_rate"], m["exec"]) == (3, 1, 0.5, 3.0)
    assert (m["ktok_in"], m["ktok_out"], m["calls"]) == (2.0, 1.0, 5.0)
    assert aggregate([])["accept_rate"] == 0.0


def test_unknown_policy():
    with pytest.raises(MalformedInput):
        run_batch(["a dog"], RunConfig(), "greedy")


def test_ablate_covers_variants():
    table = ablate(generate_suite(4, seed=1), RunConfig(budget=4), ["full", "no_edit"])
    assert set(table) == {"full", "no_edit"} and table["full"]["prompts"] == 4


def test_outputs_round_trip(tmp_path):
    logs, metrics = run_batch(generate_suite(3, seed=2), RunConfig(budget=3))
    write_outputs(tmp_path, logs, metrics)
    assert load_logs(tmp_path) == logs
    assert json.loads((tmp_path / "metrics.json").read_text()) == metrics
    assert aggregate(load_logs(tmp_path)) == metrics


def test_read_prompts(tmp_path):
    path = tmp_path / "p.txt"
    path.write_text("a dog\n\n  two cats  \n", encoding="utf-8")
    assert read_prompts(path) == ["a dog", "two cats"]
    path.write_bytes(b"\xff\xfe\xfa")
    with pytest.raises(MalformedInput):
        read_prompts(path)
    with pytest.raises(MalformedInput):
        read_prompts(tmp_path / "missing.txt")


# -- cli ---------------------------------------------------------------------------


def test_cli_compile(capsys, tmp_path):
    assert main(["compile", "three red apples on a table", "--out", str(tmp_path)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["program"]["program_id"] and doc["cost"]["mllm_calls"] >= 1
    assert (tmp_path / "program.json").exists()


def test_cli_compile_empty_prompt_exits_2(capsys):
    assert main(["compile", ""]) == 2
    assert "MalformedInput" in capsys.readouterr().err


def test_cli_verify(capsys, tmp_path):
    prog = compile_program({"source_prompt": "a dog", "objects": [{"object_id": "dog", "label": "dog"}],
                            "at_least_count_constraints": [{"object_id": "dog", "count": 1}],
                            "text_constraints": [{"text": "OPEN"}]})
    (tmp_path / "prog.json").write_text(json.dumps(to_document(prog)))
    (tmp_path / "ev.json").write_text(json.dumps({
        "width": 16, "height": 16, "detections": {"dog": [{"score": 0.9, "box": [0, 0, 8, 8]}]},
        "texts": {"OPEN": "satisfied"}}))
    assert main(["verify", str(tmp_path / "prog.json"), str(tmp_path / "ev.json")]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["gate_pass"] is True and doc["blocking"] == []
    (tmp_path / "ev.json").write_text(json.dumps({"width": 16}))
    assert main(["verify", str(tmp_path / "prog.json"), str(tmp_path / "ev.json")]) == 2
    (tmp_path / "prog.json").write_text("{")
    assert main(["verify", str(tmp_path / "prog.json"), str(tmp_path / "ev.json")]) == 2


def test_cli_run_and_report(capsys, tmp_path):
    prompts = tmp_path / "prompts.txt"
    prompts.write_text("\n".join(generate_suite(3, seed=5)))
    out = tmp_path / "run"
    assert main(["run", str(prompts), "--budget", "4", "--out", str(out)]) == 0
    metrics = json.loads(capsys.readouterr().out)
    assert metrics["prompts"] == 3 and len(load_logs(out)) == 3
    assert main(["report", str(out)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split()[0] == "policy" and lines[1].split()[:2] == ["full", "3"]


def test_cli_ablate(capsys, tmp_path):
    prompts = tmp_path / "prompts.txt"
    prompts.write_text("a dog\ntwo cats")
    assert main(["ablate", str(prompts), "--variants", "full", "random_policy", "--budget", "3"]) == 0
    assert set(json.loads(capsys.readouterr().out)) == {"full", "random_policy"}


def test_cli_error_exit_codes(capsys, tmp_path):
    assert main(["report", str(tmp_path)]) == 2
    assert main(["run", str(tmp_path / "missing.txt")]) == 2
    assert main(["compile", "a dog", "--mode", "scripted"]) == 2
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"budget": 0}))
    assert main(["compile", "a dog", "--config", str(cfg)]) == 2
