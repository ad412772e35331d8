"""Command line entry points."""

import json

import pytest

from treespec.cli import main


def _run_args(out_dir, *extra):
    return [
        "run",
        "--out-dir", str(out_dir),
        "--max-new-tokens", "10",
        "--M", "6",
        "--dmax", "3",
        "--prompts", "4",
        "--min-prompt-len", "4",
        "--max-prompt-len", "8",
        *extra,
    ]


def test_run_and_summarize(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(_run_args(out)) == 0
    assert (out / "traces_merged.jsonl").exists()
    capsys.readouterr()

    assert main(["summarize", str(out / "traces_merged.jsonl"), "--out-dir", str(out)]) == 0
    assert (out / "summary.json").exists()
    printed = capsys.readouterr().out
    assert "speedup" in printed


def test_run_accepts_config_file_with_flag_overrides(tmp_path):
    out = tmp_path / "out"
    config_path = tmp_path / "run.json"
    config_path.write_text(json.dumps({
        "out_dir": str(out),
        "decode": {"max_new_tokens": 8, "draft": {"node_budget": 4, "depth_bound": 2}},
        "prompt_count": 6,
        "min_prompt_len": 4,
        "max_prompt_len": 8,
    }))
    assert main(["run", "--config", str(config_path), "--prompts", "3", "--window", "none"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["prompt_count"] == 3
    assert manifest["config"]["decode"]["draft"]["node_budget"] == 4
    assert manifest["config"]["decode"]["draft"]["window"] is None


def test_breakdown_requires_profiled_traces(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(_run_args(out)) == 0
    capsys.readouterr()
    assert main(["breakdown", str(out / "traces_merged.jsonl")]) == 2
    assert "profil" in capsys.readouterr().err.lower()

    prof = tmp_path / "prof"
    assert main(_run_args(prof, "--profile")) == 0
    capsys.readouterr()
    assert main(["breakdown", str(prof / "traces_merged.jsonl"), "--out-dir", str(prof)]) == 0
    assert (prof / "breakdown.json").exists()


def test_sweep_command(tmp_path, capsys):
    out = tmp_path / "sw"
    args = [
        "sweep",
        "--out-dir", str(out),
        "--max-new-tokens", "8",
        "--M", "4",
        "--dmax", "2",
        "--prompts", "2",
        "--min-prompt-len", "4",
        "--max-prompt-len", "8",
        "--param", "node_budget",
        "--values", "2,4",
    ]
    assert main(args) == 0
    assert (out / "sweep.csv").exists()
    printed = capsys.readouterr().out
    assert "node_budget" in printed


def test_bad_configuration_exits_2(tmp_path, capsys):
    args = _run_args(tmp_path / "out", "--min-prompt-len", "9", "--max-prompt-len", "4")
    assert main(args) == 2
    assert capsys.readouterr().err.strip()


def test_unknown_subcommand_rejected():
    with pytest.raises(SystemExit):
        main(["frobnicate"])
