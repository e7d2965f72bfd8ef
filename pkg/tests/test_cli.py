import json

import pytest
import torch

from ldlab import cli
from ldlab import procedural as P
from ldlab.landmarks import save_landmarks
from ldlab.seeding import THREADS_ENV, configure_threads


def _run(argv, capsys):
    rc = cli.main(argv)
    out = capsys.readouterr()
    return rc, out.out, out.err


def test_gen_corpus_contract(tmp_path, capsys):
    rc, out, _ = _run(["gen-corpus", "--kind", "stage1", "--n", "5", "--seed", "0", "--out", str(tmp_path / "c1")], capsys)
    assert rc == 0
    assert json.loads(out)["records"] == 5
    assert len(P.read_manifest(tmp_path / "c1" / "manifest.jsonl")) == 5
    frozen = json.loads((tmp_path / "c1" / "run_config.json").read_text())
    assert frozen["command"] == "gen-corpus" and frozen["seed"] == 0 and frozen["options"]["n"] == 5


def test_unknown_subcommand_is_usage_error(capsys):
    rc, _, err = _run(["frobnicate"], capsys)
    assert rc == 1
    assert "usage" in err


def test_missing_required_and_bad_flag(tmp_path, capsys):
    rc, _, err = _run(["eval", "--out", str(tmp_path)], capsys)
    assert rc == 1 and "--detector" in err
    rc, _, err = _run(["gen-corpus", "--out", str(tmp_path), "--n", "many"], capsys)
    assert rc == 1


def test_runtime_error_exit_two(tmp_path, capsys):
    rc, _, err = _run(["eval", "--detector", str(tmp_path / "none.ckpt"), "--manifest", str(tmp_path / "m.jsonl"),
                       "--out", str(tmp_path)], capsys)
    assert rc == 2
    assert err.startswith("error[")


def test_unknown_config_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("n: 3\nbogus: 1\n")
    rc, _, err = _run(["gen-corpus", "--config", str(cfg), "--out", str(tmp_path / "o")], capsys)
    assert rc == 1 and "bogus" in err


def test_config_file_and_override_precedence(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("n: 3\nseed: 4\n")
    _run(["gen-corpus", "--config", str(cfg), "--n", "2", "--out", str(tmp_path / "o")], capsys)
    frozen = json.loads((tmp_path / "o" / "run_config.json").read_text())
    assert frozen["options"]["n"] == 2 and frozen["seed"] == 4


def test_rerun_from_frozen_config_is_byte_identical(tmp_path, capsys):
    base = ["gen-corpus", "--kind", "stage2", "--per-style", "1", "--styles", "3,7", "--seed", "5"]
    assert _run(base + ["--out", str(tmp_path / "a")], capsys)[0] == 0
    assert _run(["gen-corpus", "--config", str(tmp_path / "a" / "run_config.json"), "--out", str(tmp_path / "b")],
                capsys)[0] == 0
    ma = P.read_manifest(tmp_path / "a" / "manifest.jsonl")
    for rel in ["manifest.jsonl", "run_config.json"] + [r.image_path for r in ma] + [r.landmarks_path for r in ma]:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_eval_and_plot_end_to_end(tmp_path, capsys):
    _run(["gen-corpus", "--kind", "stage1", "--n", "4", "--out", str(tmp_path / "c")], capsys)
    rc, _, _ = _run(["pretrain-detector", "--manifest", str(tmp_path / "c" / "manifest.jsonl"), "--steps", "1",
                     "--batch-size", "2", "--base-width", "8", "--out", str(tmp_path / "d")], capsys)
    assert rc == 0
    rc, out, _ = _run(["eval", "--detector", str(tmp_path / "d" / "detector-pretrain-1.ckpt"),
                       "--manifest", str(tmp_path / "c" / "manifest.jsonl"), "--report", str(tmp_path / "r.json"),
                       "--out", str(tmp_path / "e")], capsys)
    assert rc == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert {"nme_mean", "fr_at_threshold", "auc_at_threshold", "ced", "config_hash", "dataset_hash"} <= set(report)
    lines = (tmp_path / "r.ced.csv").read_text().splitlines()
    assert lines[0] == "error,fraction" and len(lines) == 6
    rc, _, _ = _run(["plot-ced", "--csv", str(tmp_path / "r.ced.csv"), "--out", str(tmp_path / "p")], capsys)
    assert rc == 0
    assert (tmp_path / "p" / "ced.svg").read_text().lstrip().startswith("<?xml")


def test_sample_command(tmp_path, capsys):
    _run(["gen-corpus", "--kind", "stage1", "--n", "2", "--resolution", "32", "--out", str(tmp_path / "c")], capsys)
    rc, _, _ = _run(["train-stage1", "--manifest", str(tmp_path / "c" / "manifest.jsonl"), "--steps", "1",
                     "--base-width", "8", "--depth", "2", "--timestep-embedding-dim", "16", "--out", str(tmp_path / "s")],
                    capsys)
    assert rc == 0
    save_landmarks(P.sample_base_landmarks(3), tmp_path / "lm.json")
    rc, _, _ = _run(["sample", "--checkpoint", str(tmp_path / "s" / "stage1-1.ckpt"), "--landmarks",
                     str(tmp_path / "lm.json"), "--style", "0", "--ddim-steps", "2", "--out", str(tmp_path / "o")], capsys)
    assert rc == 0
    assert P.load_png(tmp_path / "o" / "sample.png").shape == (32, 32, 3)


def test_threads_env(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "1")
    try:
        assert configure_threads() == 1
        assert torch.are_deterministic_algorithms_enabled()
    finally:
        torch.use_deterministic_algorithms(False)


def test_out_defaults_to_report_directory(tmp_path, capsys):
    _run(["gen-corpus", "--kind", "stage1", "--n", "2", "--out", str(tmp_path / "c")], capsys)
    _run(["pretrain-detector", "--manifest", str(tmp_path / "c" / "manifest.jsonl"), "--steps", "0",
          "--base-width", "8", "--out", str(tmp_path / "d")], capsys)
    rc, _, _ = _run(["eval", "--detector", str(tmp_path / "d" / "detector-pretrain-0.ckpt"),
                     "--manifest", str(tmp_path / "c" / "manifest.jsonl"), "--report", str(tmp_path / "r" / "r.json")],
                    capsys)
    assert rc == 0
    assert len(json.loads((tmp_path / "r" / "r.json").read_text())["per_sample_nme"]) == 2
    assert (tmp_path / "r" / "run_config.json").exists()
    rc, _, err = _run(["gen-corpus", "--n", "2"], capsys)
    assert rc == 1 and "--out" in err
