"""Video-guided curriculum pretraining of the CPC audio encoder.

The guide lets the autoregressive context look at the paired video through
cross-attention.  Early stages show only the annotated span of the video;
later stages widen the visible window until the whole clip is shown.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import cpc
from .numerics import AdamState, adam_step, nn
from .numerics import tensor as T
from .numerics.nn import Module
from .numerics.tensor import DimensionError, Tensor

log = logging.getLogger(__name__)

PACINGS = ("linear", "exponential", "logarithmic")
_ALIASES = {"lin": "linear", "exp": "exponential", "log": "logarithmic"}


def pacing_name(name: str) -> str:
    name = _ALIASES.get(name, name)
    if name not in PACINGS:
        raise ValueError(f"unknown pacing function {name!r}; choose from {PACINGS}")
    return name


def _stage_weights(pacing: str, kappa: int) -> np.ndarray:
    t = np.arange(1, kappa + 1, dtype=np.float64)
    if pacing == "linear":
        return np.full(kappa, 1.0 / kappa)
    if pacing == "exponential":
        return 2.0 ** (t - 1) / (2.0 ** kappa - 1)
    return (np.log(t + 1) - np.log(t)) / math.log(kappa + 1)


def stage_steps(pacing: str, kappa: int, total: int) -> list[int]:
    """Per-stage step budgets summing to ``total``.

    Fractional budgets are rounded by largest remainder so the stages add
    up exactly.
    """
    pacing = pacing_name(pacing)
    if kappa < 1 or total < kappa:
        raise ValueError(f"need kappa >= 1 and total >= kappa, got kappa={kappa}, total={total}")
    raw = total * _stage_weights(pacing, kappa)
    steps = np.floor(raw).astype(int)
    short = total - int(steps.sum())
    order = np.argsort(-(raw - steps), kind="stable")
    steps[order[:short]] += 1
    return [int(s) for s in steps]


@dataclass
class CurriculumSchedule:
    kappa: int = 10
    pacing: str = "linear"
    total_steps: int = 2000
    stage: int = 0
    stage_budget: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.pacing = pacing_name(self.pacing)
        if not self.stage_budget:
            self.stage_budget = stage_steps(self.pacing, self.kappa, self.total_steps)


@dataclass(frozen=True)
class MaskSpan:
    left: float
    right: float


def mask_bounds(tau_s: float, tau_e: float, length: float, t: float, kappa: int,
                gamma: float) -> MaskSpan:
    """Visible window at stage ``t``: the span widened by (t / kappa) * gamma of its margins."""
    if not 0 <= tau_s <= tau_e <= length:
        raise ValueError(f"span ({tau_s}, {tau_e}) not inside [0, {length}]")
    if not 0 <= t <= kappa:
        raise ValueError(f"stage {t} outside [0, {kappa}]")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma {gamma} outside [0, 1]")
    grow = t / kappa * gamma
    return MaskSpan(tau_s - grow * tau_s, tau_e + grow * (length - tau_e))


def row_mask(span: MaskSpan, length: int) -> np.ndarray:
    i = np.arange(length)
    return (i >= math.floor(span.left)) & (i <= math.ceil(span.right) - 1)


def apply_mask(video: np.ndarray, span: MaskSpan) -> np.ndarray:
    """Zero every row outside floor(left) .. ceil(right) - 1."""
    return np.where(row_mask(span, video.shape[0])[:, None], video, 0.0)


@dataclass(frozen=True)
class VariantFlags:
    no_curriculum: bool = False
    no_entire_video: bool = False
    no_self_attention: bool = False


class VideoGuide(Module):
    def __init__(self, d_video: int, d: int, rng: np.random.Generator, heads: int = 4):
        self.video_proj = nn.Linear(d_video, d, rng)
        self.video_encoder = nn.EncoderLayer(d, heads, 2 * d, rng)
        self.query = nn.Linear(d, d, rng)
        self.key = nn.Linear(d, d, rng)
        self.value = nn.Linear(d, d, rng)
        self.norm = nn.LayerNorm(d)

    def video_memory(self, video: Tensor, keep_rows: np.ndarray,
                     flags: VariantFlags = VariantFlags()) -> Tensor:
        """Encoded video with its masked copy appended in time: (B, 2L, d)."""
        v = self.video_proj(video)
        if not flags.no_self_attention:
            v = self.video_encoder(v)
        masked = v * keep_rows[..., None].astype(np.float64)
        if flags.no_entire_video:
            return masked
        return T.concat([v, masked], axis=1)

    def attend(self, z: Tensor, memory: Tensor):
        if z.shape[-1] != memory.shape[-1]:
            raise DimensionError(f"audio width {z.shape[-1]} != video width {memory.shape[-1]}")
        return T.scaled_dot_attention(self.query(z), self.key(memory), self.value(memory))

    def __call__(self, z: Tensor, video, keep_rows: np.ndarray,
                 flags: VariantFlags = VariantFlags()) -> Tensor:
        video = video if isinstance(video, Tensor) else Tensor(video)
        attended, _ = self.attend(z, self.video_memory(video, keep_rows, flags))
        return self.norm(z + T.relu(attended))


class Vgcl(Module):
    """CPC encoder and context plus the guide and its own prediction heads."""

    def __init__(self, n_mel: int, d_video: int, d: int, k_steps: int, rng: np.random.Generator):
        self.encoder = cpc.CpcEncoder(n_mel, d, rng)
        self.context = nn.GRU(d, d, rng)
        self.heads = [nn.glorot(rng, (d, d), d, d) for _ in range(k_steps)]
        self.guide = VideoGuide(d_video, d, rng)

    def encode(self, spec) -> Tensor:
        return self.encoder(spec if isinstance(spec, Tensor) else Tensor(spec))


def vgcl_infonce(z_hat: Tensor, z: Tensor, context: nn.GRU, heads, n_negatives: int,
                 rng: np.random.Generator | None = None, negatives=None) -> cpc.InfoNceResult:
    """InfoNCE where the context runs over the guided latents but targets stay unguided."""
    return cpc.infonce(context(z_hat), z, heads, n_negatives, rng, negatives)


def guided_loss(model: Vgcl, audio: np.ndarray, video: np.ndarray, keep_rows: np.ndarray,
                n_negatives: int, rng, flags: VariantFlags = VariantFlags()) -> cpc.InfoNceResult:
    z = model.encode(audio)
    z_hat = model.guide(z, video, keep_rows, flags)
    return vgcl_infonce(z_hat, z, model.context, model.heads, n_negatives, rng)


def curriculum_masks(spans: np.ndarray, length: int, t: int, kappa: int, gammas: np.ndarray,
                     flags: VariantFlags = VariantFlags()) -> np.ndarray:
    """(B, L) rows kept for each sample; inclusive frame spans cover [s, e + 1)."""
    out = np.empty((len(spans), length), dtype=bool)
    for i, (s, e) in enumerate(spans):
        if flags.no_curriculum:
            span = mask_bounds(s, e + 1, length, kappa, kappa, 1.0)
        else:
            span = mask_bounds(s, e + 1, length, t, kappa, float(gammas[i]))
        out[i] = row_mask(span, length)
    return out


def pretrain_curriculum(model: Vgcl, audio: np.ndarray, video: np.ndarray, spans: np.ndarray,
                        schedule: CurriculumSchedule, cfg: cpc.PretrainConfig, rng_batches,
                        rng_gamma, rng_negatives, flags: VariantFlags = VariantFlags(),
                        on_log=None) -> list[dict]:
    """Train through stages 1..kappa; returns (stage, step, loss, acc) log rows."""
    if len(audio) == 0:
        raise ValueError("empty pretraining set")
    params = model.named_parameters()
    opt = AdamState(base_lr=cfg.lr, warmup_steps=cfg.warmup_steps)
    length = video.shape[1]
    history = []
    step = 0
    for t in range(1, schedule.kappa + 1):
        schedule.stage = t
        run_loss = run_acc = 0.0
        n_run = 0
        budget = schedule.stage_budget[t - 1]
        for i in range(budget):
            step += 1
            idx = cpc.sample_batch(rng_batches, len(audio), cfg.batch_size)
            gammas = rng_gamma.uniform(0.0, 1.0, size=len(idx))
            keep = curriculum_masks(spans[idx], length, t, schedule.kappa, gammas, flags)
            res = guided_loss(model, audio[idx], video[idx], keep, cfg.n_negatives,
                              rng_negatives, flags)
            model.zero_grad()
            res.loss.backward()
            adam_step(opt, params)
            run_loss += res.loss.item()
            run_acc += res.accuracy
            n_run += 1
            if step % cfg.log_every == 0 or i == budget - 1:
                row = {"stage": t, "step": step, "loss": run_loss / n_run, "acc": run_acc / n_run}
                history.append(row)
                log.info("vgcl stage %d step %d loss %.4f acc %.3f", t, step, row["loss"],
                         row["acc"])
                if on_log:
                    on_log(row)
                run_loss = run_acc = 0.0
                n_run = 0
    return history


def evaluate(model: Vgcl, audio, video, spans, n_negatives: int, rng,
             flags: VariantFlags = VariantFlags(), batch_size: int = 8) -> dict:
    """Guided InfoNCE with the full clip visible (no annotation needed)."""
    losses, accs = [], []
    length = video.shape[1]
    for lo in range(0, len(audio), batch_size):
        sl = slice(lo, lo + batch_size)
        keep = np.ones((len(audio[sl]), length), dtype=bool)
        res = guided_loss(model, audio[sl], video[sl], keep, n_negatives, rng, flags)
        losses.append(res.loss.item())
        accs.append(res.accuracy)
    return {"loss": float(np.mean(losses)), "acc": float(np.mean(accs))}
