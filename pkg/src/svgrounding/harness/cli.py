"""Command line: synth, pretrain, train, eval, run, ablate, report, ingest."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .. import corpus, grounder, vgcl
from ..numerics import checkpoint
from ..signal import SignalError
from . import experiment as ex
from .config import ConfigError, RunConfig
from .metrics import random_span_miou
from .report import write_report

USAGE_ERROR = 1
DATA_ERROR = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# flags that override RunConfig fields; dest names match the field names
_OVERRIDES = {
    "--seed": int, "--corpus": str, "--d": int, "--epochs": int, "--batch-size": int,
    "--lr": float, "--kappa": int, "--pacing": str, "--cpc-steps": int, "--vgcl-steps": int,
    "--n-train": int, "--n-test": int,
}
_DEST = {"--corpus": "corpus_dir"}


def _add_config_flags(p: argparse.ArgumentParser, *names: str) -> None:
    p.add_argument("--config", help="JSON run config; flags override its values")
    for flag in names:
        dest = _DEST.get(flag, flag[2:].replace("-", "_"))
        p.add_argument(flag, dest=dest, type=_OVERRIDES[flag], default=None)


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    changes = {}
    for flag in _OVERRIDES:
        dest = _DEST.get(flag, flag[2:].replace("-", "_"))
        value = getattr(args, dest, None)
        if value is not None:
            changes[dest] = value
    for name in ("no_curriculum", "no_entire_video", "no_self_attention"):
        if getattr(args, name, False):
            changes[name] = True
    return cfg.replace(**changes) if changes else cfg


def _seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--seeds expects comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="svgrounding", description="Spoken video grounding experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth", help="generate the synthetic corpus")
    s.add_argument("--out", required=True)
    _add_config_flags(s, "--seed", "--n-train", "--n-test")

    s = sub.add_parser("pretrain", help="CPC or video-guided curriculum pretraining")
    s.add_argument("--mode", choices=("cpc", "vgcl"), required=True)
    s.add_argument("--steps", type=int, help="pretraining steps for the chosen mode")
    s.add_argument("--out", required=True)
    for flag in ("--no-curriculum", "--no-entire-video", "--no-self-attention"):
        s.add_argument(flag, action="store_true")
    _add_config_flags(s, "--seed", "--corpus", "--d", "--kappa", "--pacing")

    s = sub.add_parser("train", help="train the grounding network")
    s.add_argument("--init", help="pretraining checkpoint to transplant")
    s.add_argument("--out", required=True)
    _add_config_flags(s, "--seed", "--corpus", "--d", "--epochs", "--batch-size", "--lr")

    s = sub.add_parser("eval", help="evaluate a grounding checkpoint on the test split")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--split", default="test", choices=corpus.SPLITS)
    _add_config_flags(s, "--seed", "--corpus", "--d")

    for name, helptext in (("run", "baseline, CPC and VGCL variants"),
                           ("ablate", "VGCL and its ablations")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--seeds", default="0,1,2")
        s.add_argument("--variants", help="comma-separated variant names")
        s.add_argument("--out", required=True)
        _add_config_flags(s, *_OVERRIDES)

    s = sub.add_parser("report", help="merge reports into CSV tables and figures")
    s.add_argument("--runs", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("ingest", help="convert precomputed real features into a corpus file")
    s.add_argument("--video", required=True)
    s.add_argument("--spectrograms", required=True)
    s.add_argument("--annotations", required=True)
    s.add_argument("--out", required=True)
    return p


def _echo(cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")


def cmd_synth(args) -> None:
    cfg = _config(args)
    synth = corpus.SynthConfig(n_train=cfg.n_train, n_val=cfg.n_val, n_test=cfg.n_test,
                               n_v=cfg.n_v, n_a=cfg.n_a)
    for split, path in corpus.synthesize_to(synth, cfg.seed, args.out).items():
        print(f"{split}\t{path}")


def cmd_pretrain(args) -> None:
    cfg = _config(args)
    if args.steps is not None:
        cfg = cfg.replace(**{f"{args.mode}_steps": args.steps})
    out = Path(args.out)
    _echo(cfg, out)
    train = ex.load_corpus(cfg)["train"]
    if args.mode == "cpc":
        model, hist = ex.pretrain_cpc(cfg, train)
        ex.write_csv(out / "pretrain_log.csv", hist, ("step", "loss", "acc"))
    else:
        flags = vgcl.VariantFlags(cfg.no_curriculum, cfg.no_entire_video, cfg.no_self_attention)
        budget = vgcl.stage_steps(cfg.pacing, cfg.kappa, cfg.vgcl_steps)
        for t, n in enumerate(budget, 1):
            print(f"stage {t}\t{n} steps")
        model, hist = ex.pretrain_vgcl(cfg, train, flags)
        ex.write_csv(out / "curriculum.csv", hist, ("stage", "step", "loss", "acc"))
    path = out / f"{args.mode}.ckpt"
    checkpoint.save(path, model.named_parameters(args.mode))
    last = hist[-1] if hist else {"loss": float("nan"), "acc": float("nan")}
    print(f"checkpoint\t{path}\nloss\t{last['loss']:.4f}\nacc\t{last['acc']:.4f}")


def _mode_of(params: dict) -> str:
    prefixes = {k.split(".", 1)[0] for k in params}
    for mode in ("vgcl", "cpc"):
        if mode in prefixes:
            return mode
    raise checkpoint.CheckpointError(
        f"checkpoint holds no cpc or vgcl parameters (prefixes: {sorted(prefixes)})")


def cmd_train(args) -> None:
    cfg = _config(args)
    out = Path(args.out)
    _echo(cfg, out)
    sets = ex.load_corpus(cfg)
    net = ex.build_grounder(cfg, sets["train"])
    if args.init:
        params = checkpoint.load(args.init)
        mode = _mode_of(params)
        grounder.transplant(net, params, mode)
        print(f"transplanted\t{mode}")
    hist = grounder.train(net, sets["train"], ex.train_config(cfg), cfg.seed)
    ex.write_csv(out / "train_log.csv", hist, ("epoch", "bound", "inside", "total"))
    checkpoint.save(out / "grounder.ckpt", net.named_parameters(grounder.PREFIX))
    print(f"checkpoint\t{out / 'grounder.ckpt'}")


def cmd_eval(args) -> None:
    cfg = _config(args)
    out = Path(args.out)
    _echo(cfg, out)
    sets = ex.load_corpus(cfg)
    net = ex.build_grounder(cfg, sets["train"])
    params = checkpoint.load(args.checkpoint)
    expected = net.named_parameters(grounder.PREFIX)
    missing = sorted(set(expected) - set(params))
    if missing:
        raise checkpoint.CheckpointError(f"checkpoint lacks {len(missing)} parameters, e.g. {missing[0]}")
    checkpoint.assign(expected, params)
    report = ex.evaluate_model(net, sets[args.split], cfg, "eval", out)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    for k, v in report.row().items():
        print(f"{k}\t{v}")


def _run_many(args, default_variants) -> None:
    base = _config(args)
    names = args.variants.split(",") if args.variants else list(default_variants)
    for name in names:
        ex.variant(name)
    out = Path(args.out)
    for seed in _seeds(args.seeds):
        for r in ex.run_experiment(base.replace(seed=seed), names, out):
            print(f"{r.variant}\t{r.seed}\t{r.mean_iou:.2f}")


def cmd_report(args) -> None:
    runs = Path(args.runs)
    reference = None
    cfgs = sorted(runs.rglob("seed_*/config.json"))
    if cfgs:
        vals = []
        for p in cfgs:
            cfg = RunConfig.load(p)
            vals.append(random_span_miou(ex.load_corpus(cfg)["test"].spans, cfg.n_v))
        reference = float(np.median(vals))
    for key, path in write_report(runs, args.out, reference).items():
        print(f"{key}\t{path}")


def cmd_ingest(args) -> None:
    ds = corpus.ingest_real(args.video, args.spectrograms, args.annotations)
    corpus.write(args.out, ds)
    print(f"{len(ds)} samples\t{args.out}")


COMMANDS = {
    "synth": cmd_synth, "pretrain": cmd_pretrain, "train": cmd_train, "eval": cmd_eval,
    "run": lambda a: _run_many(a, ex.MAIN_VARIANTS), "ablate": lambda a: _run_many(a, ex.ABLATIONS),
    "report": cmd_report, "ingest": cmd_ingest,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_help(sys.stderr)
            return USAGE_ERROR
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(message)s")
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return USAGE_ERROR
    except (ConfigError, corpus.CorpusError, checkpoint.CheckpointError, SignalError,
            ex.StageError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR
    return 0
