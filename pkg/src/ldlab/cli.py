"""Command-line entry point: ``ldlab <subcommand> [options]``.

Options for a subcommand come from three layers, later ones winning:
built-in defaults, a ``--config`` file (YAML or JSON, or a previous run's
``run_config.json``), then explicit flags. The resolved options and the
seed are frozen into ``run_config.json`` in the output directory.

Exit codes: 0 success, 1 usage error, 2 runtime error. Errors go to stderr
as ``error[<code>]: <message>``.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .config import (
    AutoencoderTrainConfig,
    DetectorTrainConfig,
    SamplerConfig,
    TrainConfig,
    freeze,
    load_config_file,
)
from .editing import EditConfig
from .exceptions import BadConfig, LdlabError
from .seeding import configure_threads


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


# option name -> (type, default, help); "out" and "config" are added to every command
_TRAIN = {f: (type(v), v, None) for f, v in TrainConfig().to_dict().items()}
_DET = {f: (type(v), v, None) for f, v in DetectorTrainConfig().to_dict().items()}
_AE = {f: (type(v), v, None) for f, v in AutoencoderTrainConfig().to_dict().items()}
_SAMPLER = {f: (type(v), v, None) for f, v in SamplerConfig().to_dict().items()}


def _ints(text):
    if isinstance(text, list):
        return [int(v) for v in text]
    return [int(v) for v in str(text).split(",") if v.strip()]


def _strs(text):
    if isinstance(text, list):
        return [str(v) for v in text]
    return [v for v in str(text).split(",") if v.strip()]


COMMANDS = {
    "gen-corpus": {
        "kind": (str, "stage1", "stage1 (base domain) or stage2 (multi-domain)"),
        "n": (int, 2000, "stage1: number of faces"),
        "per_style": (int, 32, "stage2: records per style"),
        "styles": (_ints, None, "stage2: comma-separated style ids (default 1..25)"),
        "seed": (int, 0, None),
        "resolution": (int, 64, None),
    },
    "train-autoencoder": {"manifest": (str, None, "training corpus manifest"), **_AE},
    "train-stage1": {
        "manifest": (str, None, "base-domain corpus manifest"),
        "autoencoder": (str, None, "autoencoder checkpoint (default: identity)"),
        **_TRAIN,
    },
    "train-stage2": {
        "stage1": (str, None, "stage-1 denoiser checkpoint"),
        "manifest": (str, None, "multi-domain corpus manifest"),
        **_TRAIN,
    },
    "train-onestep": {
        "manifest": (str, None, "multi-domain corpus manifest"),
        "autoencoder": (str, None, "autoencoder checkpoint (default: identity)"),
        **_TRAIN,
    },
    "gen-dataset": {
        "stage2": (str, None, "stage-2 denoiser checkpoint"),
        "pool": (str, None, "landmark pool manifest (default: the stage-2 training corpus)"),
        "styles": (_ints, None, "comma-separated style ids (default 1..25)"),
        "per_style": (int, 16, None),
        "seed": (int, 0, None),
        **_SAMPLER,
    },
    "pretrain-detector": {
        "manifest": (str, None, "base-domain corpus manifest"),
        "val_manifest": (str, None, "optional validation manifest"),
        **_DET,
    },
    "finetune-detector": {
        "detector": (str, None, "pretrained detector checkpoint"),
        "manifest": (str, None, "synthetic dataset manifest"),
        "val_manifest": (str, None, "optional validation manifest"),
        **{**_DET, "learning_rate": (float, 1e-4, None), "steps": (int, 1000, None)},
    },
    "eval": {
        "detector": (str, None, "detector checkpoint"),
        "manifest": (str, None, "evaluation manifest"),
        "report": (str, None, "report JSON path (default: <out>/report.json)"),
        "ced_csv": (str, None, "CED CSV path (default: next to the report)"),
        "threshold": (float, 0.10, None),
        "normalizer": (str, "interocular", "interocular or bbox_diagonal"),
        "seed": (int, 0, None),
    },
    "plot-ced": {
        "csv": (_strs, None, "comma-separated CED CSV files; labels are the file stems"),
        "svg": (str, None, "output SVG path (default: <out>/ced.svg)"),
        "threshold": (float, 0.10, None),
        "seed": (int, 0, None),
    },
    "sample": {
        "checkpoint": (str, None, "denoiser checkpoint"),
        "landmarks": (str, None, "landmark JSON file"),
        "style": (int, 0, None),
        "seed": (int, 0, None),
        "png": (str, None, "output PNG (default: <out>/sample.png)"),
        **_SAMPLER,
    },
    "ablate": {
        "one_step": (str, None, "one-step denoiser checkpoint"),
        "stage1": (str, None, "stage-1 denoiser checkpoint"),
        "stage2": (str, None, "stage-2 denoiser checkpoint"),
        "grid": (str, None, "manifest supplying the landmark/style grid"),
        "n": (int, 64, None),
        "seed": (int, 0, None),
        **_SAMPLER,
    },
}

REQUIRED = {
    "train-autoencoder": ("manifest",),
    "train-stage1": ("manifest",),
    "train-stage2": ("stage1", "manifest"),
    "train-onestep": ("manifest",),
    "gen-dataset": ("stage2",),
    "pretrain-detector": ("manifest",),
    "finetune-detector": ("detector", "manifest"),
    "eval": ("detector", "manifest"),
    "plot-ced": ("csv",),
    "sample": ("checkpoint", "landmarks"),
    "ablate": ("one_step", "stage1", "stage2", "grid"),
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ldlab", description="Landmark-conditioned diffusion toolkit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    for name, opts in COMMANDS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--out", help="output directory (default: the directory of an explicit output file)")
        sp.add_argument("--config", help="YAML/JSON option file or a previous run_config.json")
        for opt, (typ, default, help_) in opts.items():
            h = (help_ + " " if help_ else "") + f"(default: {default})"
            sp.add_argument("--" + opt.replace("_", "-"), dest=opt, type=typ, default=None, help=h)
    return p


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Defaults < config file < explicit flags; unknown keys are rejected."""
    opts = {k: v[1] for k, v in COMMANDS[command].items()}
    if args.config:
        given = load_config_file(args.config)
        unknown = sorted(set(given) - set(opts))
        if unknown:
            raise BadConfig(f"unknown option(s) for {command}: {', '.join(unknown)}")
        for k, v in given.items():
            typ = COMMANDS[command][k][0]
            opts[k] = None if v is None else typ(v)
    for k in opts:
        v = getattr(args, k)
        if v is not None:
            opts[k] = v
    missing = [k for k in REQUIRED.get(command, ()) if opts.get(k) in (None, "")]
    if missing:
        raise UsageError(f"ldlab {command}: missing required option(s): "
                         + ", ".join("--" + m.replace("_", "-") for m in missing))
    return opts


def _pick(opts: dict, cls):
    return cls.from_dict({k: opts[k] for k in cls().to_dict() if k in opts})


def run(command: str, opts: dict, out: Path) -> dict:
    from . import evaluation as ev
    from . import pipelines as PL
    from . import procedural as P

    if command == "gen-corpus":
        if opts["kind"] == "stage1":
            m = P.build_stage1_corpus(opts["n"], opts["seed"], out, opts["resolution"])
        elif opts["kind"] == "stage2":
            m = P.build_stage2_corpus(opts["per_style"], opts["styles"], opts["seed"], out, opts["resolution"])
        else:
            raise BadConfig(f"unknown corpus kind {opts['kind']!r}")
        return {"manifest": str(m.path), "records": len(m)}
    if command == "train-autoencoder":
        return {"checkpoint": str(PL.train_autoencoder(opts["manifest"], _pick(opts, AutoencoderTrainConfig), out))}
    if command == "train-stage1":
        return {"checkpoint": str(PL.train_stage1(opts["manifest"], opts["autoencoder"], _pick(opts, TrainConfig), out))}
    if command == "train-stage2":
        return {"checkpoint": str(PL.train_stage2(opts["stage1"], opts["manifest"], _pick(opts, TrainConfig), out))}
    if command == "train-onestep":
        return {"checkpoint": str(PL.train_one_step(opts["manifest"], opts["autoencoder"], _pick(opts, TrainConfig), out))}
    if command == "gen-dataset":
        styles = opts["styles"] or list(range(1, P.N_STYLES + 1))
        m = PL.generate_synthetic_dataset(opts["stage2"], styles, opts["per_style"], EditConfig(),
                                          _pick(opts, SamplerConfig), opts["seed"], out, opts["pool"])
        return {"manifest": str(m.path), "records": len(m)}
    if command == "pretrain-detector":
        ck = PL.pretrain_detector(opts["manifest"], _pick(opts, DetectorTrainConfig), out, opts["val_manifest"])
        return {"checkpoint": str(ck)}
    if command == "finetune-detector":
        ck = PL.finetune_detector(opts["detector"], opts["manifest"], _pick(opts, DetectorTrainConfig), out,
                                  opts["val_manifest"])
        return {"checkpoint": str(ck)}
    if command == "eval":
        report = Path(opts["report"] or out / "report.json")
        ced = Path(opts["ced_csv"] or report.with_suffix(".ced.csv"))
        rep = ev.evaluate(opts["detector"], opts["manifest"], opts["threshold"], opts["normalizer"])
        rep.write(report, ced)
        return {"report": str(report), "ced_csv": str(ced), "nme": rep.nme_mean,
                "fr": rep.fr_at_threshold, "auc": rep.auc_at_threshold}
    if command == "plot-ced":
        svg = Path(opts["svg"] or out / "ced.svg")
        curves = {Path(c).stem: ev.read_ced_csv(c) for c in opts["csv"]}
        ev.plot_ced(curves, svg, opts["threshold"])
        return {"svg": str(svg)}
    if command == "sample":
        png = Path(opts["png"] or out / "sample.png")
        PL.sample_image(opts["checkpoint"], opts["landmarks"], opts["style"], opts["seed"],
                        _pick(opts, SamplerConfig), png)
        return {"png": str(png)}
    if command == "ablate":
        ckpts = {"one_step": opts["one_step"], "stage1_only": opts["stage1"], "two_stage": opts["stage2"]}
        rep = PL.ablate(ckpts, opts["grid"], opts["n"], _pick(opts, SamplerConfig), opts["seed"], out)
        return {k: v["mean_alignment_px"] for k, v in rep["models"].items()}
    raise UsageError(f"unknown command {command!r}")


def _out_dir(out, opts: dict) -> Path:
    if out:
        return Path(out)
    for k in ("report", "svg", "png"):
        if opts.get(k):
            return Path(opts[k]).resolve().parent
    raise UsageError("the following argument is required: --out")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage())
        opts = resolve(args.command, args)
        out = _out_dir(args.out, opts)
    except UsageError as e:
        print(f"error[usage]: {e}", file=sys.stderr)
        return 1
    except LdlabError as e:
        print(f"error[{e.code}]: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:
        # --help / --version
        return int(e.code or 0)
    try:
        configure_threads()
        seed = opts.get("seed", 0) or 0
        freeze(out, args.command, seed, opts)
        result = run(args.command, opts, out)
    except LdlabError as e:
        print(f"error[{e.code}]: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error[io_error]: {e}", file=sys.stderr)
        return 2
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
