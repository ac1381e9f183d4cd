"""Pretrain, transplant, ground and evaluate one pipeline variant."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import corpus, cpc, grounder, vgcl
from ..numerics import checkpoint
from ..numerics.rng import stream
from .config import RunConfig
from .metrics import EvalReport, evaluate_spans, iou_many

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Variant:
    name: str
    pretrain: str  # "", "cpc" or "vgcl"
    flags: vgcl.VariantFlags = vgcl.VariantFlags()


VARIANTS = {
    "baseline": Variant("baseline", ""),
    "cpc": Variant("cpc", "cpc"),
    "vgcl": Variant("vgcl", "vgcl"),
    "vgcl_no_cl": Variant("vgcl_no_cl", "vgcl", vgcl.VariantFlags(no_curriculum=True)),
    "vgcl_no_entire": Variant("vgcl_no_entire", "vgcl", vgcl.VariantFlags(no_entire_video=True)),
    "vgcl_no_sa": Variant("vgcl_no_sa", "vgcl", vgcl.VariantFlags(no_self_attention=True)),
}
MAIN_VARIANTS = ("baseline", "cpc", "vgcl")
ABLATIONS = ("vgcl", "vgcl_no_cl", "vgcl_no_entire", "vgcl_no_sa")


class StageError(RuntimeError):
    """A pipeline stage failed; the message names the stage and variant."""


def variant(name: str, cfg: RunConfig | None = None) -> Variant:
    if name not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}")
    v = VARIANTS[name]
    if name == "vgcl" and cfg is not None:
        flags = vgcl.VariantFlags(cfg.no_curriculum, cfg.no_entire_video, cfg.no_self_attention)
        v = Variant(name, "vgcl", flags)
    return v


def load_corpus(cfg: RunConfig) -> dict[str, corpus.Dataset]:
    if cfg.corpus_dir:
        root = Path(cfg.corpus_dir)
        return {s: corpus.load(root / f"{s}.vgcd") for s in corpus.SPLITS}
    synth = corpus.SynthConfig(n_train=cfg.n_train, n_val=cfg.n_val, n_test=cfg.n_test,
                               n_v=cfg.n_v, n_a=cfg.n_a)
    return corpus.synthesize(synth, cfg.seed)


def write_csv(path: Path, rows: list[dict], columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row[k]) for k in columns})


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def pretrain_cpc(cfg: RunConfig, data: corpus.Dataset, on_log=None) -> tuple[cpc.Cpc, list[dict]]:
    n_mel = data.audio.shape[2]
    model = cpc.Cpc(n_mel, cfg.d, cfg.cpc_k, stream(cfg.seed, "cpc/init"))
    pc = cpc.PretrainConfig(cfg.cpc_steps, cfg.cpc_batch, cfg.cpc_n - 1, cfg.pretrain_lr,
                            cfg.pretrain_warmup)
    hist = cpc.pretrain(model, data.audio, pc, stream(cfg.seed, "cpc/batches"),
                        stream(cfg.seed, "cpc/negatives"), on_log)
    return model, hist


def pretrain_vgcl(cfg: RunConfig, data: corpus.Dataset, flags: vgcl.VariantFlags,
                  on_log=None) -> tuple[vgcl.Vgcl, list[dict]]:
    n_mel, d_v = data.audio.shape[2], data.video.shape[2]
    model = vgcl.Vgcl(n_mel, d_v, cfg.d, cfg.cpc_k, stream(cfg.seed, "vgcl/init"))
    sched = vgcl.CurriculumSchedule(cfg.kappa, cfg.pacing, cfg.vgcl_steps)
    pc = cpc.PretrainConfig(cfg.vgcl_steps, cfg.cpc_batch, cfg.cpc_n - 1, cfg.pretrain_lr,
                            cfg.pretrain_warmup)
    hist = vgcl.pretrain_curriculum(model, data.audio, data.video, data.spans, sched, pc,
                                    stream(cfg.seed, "vgcl/batches"), stream(cfg.seed, "vgcl/gamma"),
                                    stream(cfg.seed, "vgcl/negatives"), flags, on_log)
    return model, hist


def build_grounder(cfg: RunConfig, data: corpus.Dataset) -> grounder.Grounder:
    return grounder.Grounder(data.audio.shape[2], data.video.shape[2], cfg.d,
                             stream(cfg.seed, "grounder/init"))


def train_config(cfg: RunConfig) -> grounder.TrainConfig:
    return grounder.TrainConfig(cfg.epochs, cfg.batch_size, cfg.lr, cfg.warmup_steps, cfg.n_chunks)


def prediction_rows(data: corpus.Dataset, pred: np.ndarray) -> list[dict]:
    ious = iou_many(pred, data.spans)
    return [{"sample_id": sid, "s_pred": int(p[0]), "e_pred": int(p[1]), "tau_s": int(g[0]),
             "tau_e": int(g[1]), "iou": float(v)}
            for sid, p, g, v in zip(data.ids, pred, data.spans, ious)]


PREDICTION_COLUMNS = ("sample_id", "s_pred", "e_pred", "tau_s", "tau_e", "iou")


def evaluate_model(model: grounder.Grounder, data: corpus.Dataset, cfg: RunConfig, label: str,
                   out_dir: Path | None = None) -> EvalReport:
    pred = grounder.predict(model, data, cfg.n_chunks)
    if out_dir is not None:
        write_csv(out_dir / "predictions.csv", prediction_rows(data, pred), PREDICTION_COLUMNS)
    return evaluate_spans(pred, data.spans, label, cfg.seed, cfg.iou_thresholds)


def run_variant(cfg: RunConfig, name: str, sets: dict[str, corpus.Dataset],
                out_dir) -> EvalReport:
    """One full pipeline: optional pretraining, transplant, grounding, test evaluation."""
    v = variant(name, cfg)
    out = Path(out_dir) / v.name
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    train = sets["train"]
    stage = "pretrain"
    try:
        params = None
        if v.pretrain == "cpc":
            model, hist = pretrain_cpc(cfg, train)
            write_csv(out / "pretrain_log.csv", hist, ("step", "loss", "acc"))
            params = {k: p.data for k, p in model.named_parameters("cpc").items()}
        elif v.pretrain == "vgcl":
            model, hist = pretrain_vgcl(cfg, train, v.flags)
            write_csv(out / "curriculum.csv", hist, ("stage", "step", "loss", "acc"))
            params = {k: p.data for k, p in model.named_parameters("vgcl").items()}
        if params is not None:
            checkpoint.save(out / "pretrain.ckpt", params)
        stage = "transplant"
        net = build_grounder(cfg, train)
        if params is not None:
            grounder.transplant(net, params, v.pretrain)
        stage = "grounding"
        hist = grounder.train(net, train, train_config(cfg), cfg.seed)
        write_csv(out / "train_log.csv", hist, ("epoch", "bound", "inside", "total"))
        checkpoint.save(out / "grounder.ckpt", net.named_parameters(grounder.PREFIX))
        stage = "evaluation"
        report = evaluate_model(net, sets["test"], cfg, v.name, out)
    except Exception as exc:
        raise StageError(f"variant {v.name!r} failed during {stage}: {exc}") from exc
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    log.info("%s seed %d: mIoU %.2f", v.name, cfg.seed, report.mean_iou)
    return report


def run_experiment(cfg: RunConfig, variants, out_dir) -> list[EvalReport]:
    """Every requested variant for ``cfg.seed``; reports land under out_dir/seed_<n>/."""
    sets = load_corpus(cfg)
    root = Path(out_dir) / f"seed_{cfg.seed}"
    root.mkdir(parents=True, exist_ok=True)
    cfg.save(root / "config.json")
    return [run_variant(cfg, name, sets, root) for name in variants]
