"""Desk-scale end-to-end run driven through the CLI.

``python -m ldlab.desk --root runs/desk`` builds the corpora, trains both
diffusion stages and the one-step baseline, runs the ablation, generates
the synthetic set, pretrains and fine-tunes the detector and evaluates
both detectors. Each step writes a ``.done`` marker and is skipped on
rerun, so an interrupted run resumes where it stopped.
"""
from __future__ import annotations

import argparse
import json
import os
from pathlib import Path

from . import cli

STAGE1_STEPS = 5000
STAGE2_STEPS = 2000
DIFFUSION = {"batch_size": 8, "learning_rate": 1e-3, "checkpoint_every": 1000, "seed": 0}


def plan(root: Path) -> list[tuple[str, list[str]]]:
    r = root
    train = [f"--{k.replace('_', '-')}={v}" for k, v in DIFFUSION.items()]
    return [
        ("corpus_stage1", ["gen-corpus", "--kind", "stage1", "--n", "2000", "--seed", "0"]),
        ("corpus_stage2", ["gen-corpus", "--kind", "stage2", "--per-style", "32", "--seed", "0"]),
        ("val_multi", ["gen-corpus", "--kind", "stage2", "--per-style", "8", "--seed", "1"]),
        ("val_base", ["gen-corpus", "--kind", "stage1", "--n", "200", "--seed", "1"]),
        ("stage1", ["train-stage1", "--manifest", f"{r}/corpus_stage1/manifest.jsonl",
                    "--steps", str(STAGE1_STEPS), *train]),
        ("stage2", ["train-stage2", "--stage1", f"{r}/stage1/stage1-{STAGE1_STEPS}.ckpt",
                    "--manifest", f"{r}/corpus_stage2/manifest.jsonl", "--steps", str(STAGE2_STEPS),
                    *train, "--learning-rate=5e-4", "--cfg-drop-prob=0.1"]),
        # the one-step baseline gets the same total number of updates as the two stages together
        ("onestep", ["train-onestep", "--manifest", f"{r}/corpus_stage2/manifest.jsonl",
                     "--steps", str(STAGE1_STEPS + STAGE2_STEPS), *train]),
        ("ablate", ["ablate", "--one-step", f"{r}/onestep/onestep-{STAGE1_STEPS + STAGE2_STEPS}.ckpt",
                    "--stage1", f"{r}/stage1/stage1-{STAGE1_STEPS}.ckpt",
                    "--stage2", f"{r}/stage2/stage2-{STAGE1_STEPS + STAGE2_STEPS}.ckpt",
                    "--grid", f"{r}/val_multi/manifest.jsonl", "--n", "64", "--seed", "0"]),
        ("synthetic", ["gen-dataset", "--stage2", f"{r}/stage2/stage2-{STAGE1_STEPS + STAGE2_STEPS}.ckpt",
                       "--per-style", "16", "--seed", "0"]),
        ("detector_pre", ["pretrain-detector", "--manifest", f"{r}/corpus_stage1/manifest.jsonl",
                          "--val-manifest", f"{r}/val_base/manifest.jsonl", "--steps", "3000",
                          "--learning-rate", "1e-3", "--seed", "0"]),
        ("detector_ft", ["finetune-detector", "--detector", f"{r}/detector_pre/detector-pretrain-3000.ckpt",
                         "--manifest", f"{r}/synthetic/manifest.jsonl",
                         "--val-manifest", f"{r}/val_multi/manifest.jsonl", "--steps", "1000",
                         "--learning-rate", "1e-4", "--seed", "0"]),
        ("eval_pre", ["eval", "--detector", f"{r}/detector_pre/detector-pretrain-3000.ckpt",
                      "--manifest", f"{r}/val_multi/manifest.jsonl"]),
        ("eval_ft", ["eval", "--detector", f"{r}/detector_ft/detector-finetune-4000.ckpt",
                     "--manifest", f"{r}/val_multi/manifest.jsonl"]),
        ("eval_base", ["eval", "--detector", f"{r}/detector_pre/detector-pretrain-3000.ckpt",
                       "--manifest", f"{r}/val_base/manifest.jsonl"]),
        ("ced_plot", ["plot-ced", "--csv", f"{r}/eval_pre/report.ced.csv,{r}/eval_ft/report.ced.csv"]),
    ]


def run_desk(root, only=None, verbose: bool = True) -> Path:
    root = Path(root)
    os.environ.setdefault("LDLAB_THREADS", "1")
    for name, argv in plan(root):
        if only is not None and name not in only:
            continue
        out = root / name
        done = out / ".done"
        if done.exists():
            continue
        if verbose:
            print(f"[desk] {name}: ldlab {' '.join(argv)}", flush=True)
        rc = cli.main([*argv, "--out", str(out)])
        if rc != 0:
            raise RuntimeError(f"desk step {name} failed with exit code {rc}")
        done.write_text(json.dumps({"argv": argv}) + "\n")
    return root


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python -m ldlab.desk")
    ap.add_argument("--root", default="runs/desk")
    ap.add_argument("--only", nargs="*")
    args = ap.parse_args(argv)
    run_desk(args.root, args.only)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
