"""Span grounding network: encoders, context-query attention, boundary and inside heads."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import corpus
from .cpc import CpcEncoder
from .numerics import AdamState, adam_step, checkpoint, nn
from .numerics import tensor as T
from .numerics.nn import Module
from .numerics.tensor import DimensionError, Tensor

log = logging.getLogger(__name__)

PREFIX = "grounder"
STAGE_ONE = ("encoder.", "context.")


class ResidualBlock(Module):
    def __init__(self, d: int, rng: np.random.Generator, kernel: int = 3):
        self.conv_a = nn.Conv1d(d, d, kernel, 1, rng)
        self.conv_b = nn.Conv1d(d, d, kernel, 1, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return x + self.conv_b(T.relu(self.conv_a(x)))


class AudioEncoder(Module):
    """Stage 1 mirrors the CPC encoder and context so pretrained weights drop in."""

    def __init__(self, n_mel: int, d: int, rng: np.random.Generator):
        self.encoder = CpcEncoder(n_mel, d, rng)
        self.context = nn.GRU(d, d, rng)
        self.res1 = ResidualBlock(d, rng)
        self.res2 = ResidualBlock(d, rng)

    def stage_one(self) -> dict:
        return {k: v for k, v in self.named_parameters().items() if k.startswith(STAGE_ONE)}

    def __call__(self, spec: Tensor) -> Tensor:
        return self.res2(self.res1(self.context(self.encoder(spec))))


class VideoEncoder(Module):
    def __init__(self, d_video: int, d: int, rng: np.random.Generator):
        self.conv = nn.Conv1d(d_video, d, 3, 1, rng)
        self.rnn = nn.BiGRU(d, d, rng)

    def __call__(self, video: Tensor) -> Tensor:
        return self.rnn(self.conv(video))


@dataclass
class CqaOutput:
    fused: Tensor
    row: Tensor
    col: Tensor


class CqaBlock(Module):
    """Video-to-audio and audio-to-video attention fused back onto the video frames."""

    def __init__(self, d: int, rng: np.random.Generator):
        self.proj = nn.Linear(d, d, rng)
        self.fuse = nn.Linear(4 * d, d, rng)

    def __call__(self, v_hat: Tensor, a: Tensor) -> CqaOutput:
        d = v_hat.shape[-1]
        if a.shape[-1] != d:
            raise DimensionError(f"video width {d} != audio width {a.shape[-1]}")
        sim = T.matmul(self.proj(v_hat), T.swapaxes(self.proj(a), -1, -2)) * (1.0 / math.sqrt(d))
        s_r = T.softmax(sim, -1)
        s_c = T.softmax(sim, -2)
        beta1 = T.matmul(s_r, a)
        beta2 = T.matmul(T.matmul(s_r, T.swapaxes(s_c, -1, -2)), v_hat)
        fused = self.fuse(T.concat([v_hat, beta1, v_hat * beta1, v_hat * beta2], axis=-1))
        return CqaOutput(fused, s_r, s_c)


class PredictHeads(Module):
    def __init__(self, d: int, rng: np.random.Generator):
        self.gru_s = nn.GRU(d, d, rng)
        self.gru_e = nn.GRU(d, d, rng)
        self.gru_i = nn.GRU(d, d, rng)
        self.ffn_s = nn.FeedForward(2 * d, d, 1, rng)
        self.ffn_e = nn.FeedForward(2 * d, d, 1, rng)
        self.ffn_i = nn.FeedForward(2 * d, d, 1, rng)

    def __call__(self, v_a: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        f_s = self.gru_s(v_a)
        f_e = self.gru_e(f_s)
        f_i = self.gru_i(v_a)

        def score(ffn, f):
            out = ffn(T.concat([f, v_a], axis=-1))
            return T.reshape(out, out.shape[:-1])

        return score(self.ffn_s, f_s), score(self.ffn_e, f_e), score(self.ffn_i, f_i)


class Grounder(Module):
    def __init__(self, n_mel: int, d_video: int, d: int, rng: np.random.Generator, heads: int = 4):
        self.audio = AudioEncoder(n_mel, d, rng)
        self.video = VideoEncoder(d_video, d, rng)
        self.video_attn = nn.EncoderLayer(d, heads, 2 * d, rng)
        self.cqa = CqaBlock(d, rng)
        self.heads = PredictHeads(d, rng)

    def encode_video(self, video) -> Tensor:
        return self.video_attn(self.video(_tensor(video)))

    def __call__(self, video, audio) -> tuple[Tensor, Tensor, Tensor]:
        return forward_chunked(self, video, audio, 1)


def _tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def forward_chunked(model: Grounder, video, audio, n_chunks: int = 8):
    """Score every video frame against each temporal audio chunk, then average the scores.

    ``video`` is (B, N_v, d_v) and ``audio`` (B, N_a, n_mel).  Audio whose
    length is not a multiple of ``n_chunks`` is zero-padded at the end.
    """
    audio = np.asarray(audio, dtype=np.float64)
    bsz, n_a, n_mel = audio.shape
    pad = -n_a % n_chunks
    if pad:
        audio = np.concatenate([audio, np.zeros((bsz, pad, n_mel))], axis=1)
    chunk = audio.shape[1] // n_chunks
    pieces = audio.reshape(bsz * n_chunks, chunk, n_mel)
    v_hat = model.encode_video(video)
    # the video side is shared by all chunks of a sample
    v_rep = T.take(v_hat, np.repeat(np.arange(bsz), n_chunks), 0) if n_chunks > 1 else v_hat
    a = model.audio(Tensor(pieces))
    scores = model.heads(model.cqa(v_rep, a).fused)
    n_v = v_hat.shape[1]
    return tuple(T.mean(T.reshape(s, (bsz, n_chunks, n_v)), axis=1) for s in scores)


@dataclass
class LossParts:
    bound: Tensor
    inside: Tensor
    total: Tensor


def inside_labels(spans: np.ndarray, n_v: int) -> np.ndarray:
    i = np.arange(n_v)
    return ((i >= spans[:, :1]) & (i <= spans[:, 1:])).astype(np.float64)


def losses(p_s: Tensor, p_e: Tensor, p_i: Tensor, spans) -> LossParts:
    """Boundary cross-entropy plus per-frame inside BCE summed over frames; batch mean."""
    spans = np.asarray(spans, dtype=np.intp).reshape(-1, 2)
    n_v = p_s.shape[-1]
    if np.any(spans[:, 0] < 0) or np.any(spans[:, 0] > spans[:, 1]) or np.any(spans[:, 1] >= n_v):
        raise ValueError(f"span outside [0, {n_v}) or reversed: {spans.tolist()}")
    p_s, p_e, p_i = (T.reshape(p, (-1, n_v)) for p in (p_s, p_e, p_i))
    ce_s = T.cross_entropy_from_logits(p_s, spans[:, 0])
    ce_e = T.cross_entropy_from_logits(p_e, spans[:, 1])
    bound = T.mean(ce_s + ce_e) * 0.5
    inside = T.mean(T.tsum(T.binary_cross_entropy(p_i, inside_labels(spans, n_v)), axis=-1))
    return LossParts(bound, inside, bound + inside)


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def infer_span(p_s, p_e) -> tuple[int, int]:
    """Best (s, e) with s <= e under the product of start and end probabilities.

    Ties go to the smaller start, then the smaller end.
    """
    p_s, p_e = np.asarray(p_s, dtype=np.float64), np.asarray(p_e, dtype=np.float64)
    if p_s.ndim != 1 or p_s.shape != p_e.shape or len(p_s) < 1:
        raise ValueError(f"need two equal-length score vectors, got {p_s.shape} and {p_e.shape}")
    joint = np.triu(np.outer(_softmax(p_s), _softmax(p_e)))
    joint[np.tril_indices(len(p_s), -1)] = -1.0
    s, e = np.unravel_index(int(np.argmax(joint)), joint.shape)
    return int(s), int(e)


def infer_spans(p_s: np.ndarray, p_e: np.ndarray) -> np.ndarray:
    return np.array([infer_span(a, b) for a, b in zip(p_s, p_e)], dtype=np.int64).reshape(-1, 2)


def transplant(model: Grounder, params: dict[str, np.ndarray], mode: str) -> list[str]:
    """Copy pretrained encoder and context weights into the audio encoder's first stage.

    Only ``{mode}.encoder.*`` and ``{mode}.context.*`` are read; prediction
    heads and the video guide are pretraining-only and stay behind.
    """
    if mode not in ("cpc", "vgcl"):
        raise ValueError(f"unknown transplant mode {mode!r}")
    targets = model.audio.stage_one()
    picked = {}
    for name in targets:
        key = f"{mode}.{name}"
        if key not in params:
            raise checkpoint.CheckpointError(f"checkpoint has no parameter {key!r}")
        picked[name] = params[key]
    return checkpoint.assign(targets, picked)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    warmup_steps: int = 50
    n_chunks: int = 8


def train(model: Grounder, data: corpus.Dataset, cfg: TrainConfig, seed: int,
          on_epoch=None) -> list[dict]:
    """Adam on the total loss; returns one log row per epoch."""
    params = model.named_parameters()
    opt = AdamState(base_lr=cfg.lr, warmup_steps=cfg.warmup_steps)
    history = []
    for epoch in range(cfg.epochs):
        sums = np.zeros(3)
        count = 0
        for batch in corpus.batches(data, cfg.batch_size, seed, epoch):
            p_s, p_e, p_i = forward_chunked(model, batch.video, batch.audio, cfg.n_chunks)
            parts = losses(p_s, p_e, p_i, batch.spans)
            model.zero_grad()
            parts.total.backward()
            adam_step(opt, params)
            n = len(batch.ids)
            sums += n * np.array([parts.bound.item(), parts.inside.item(), parts.total.item()])
            count += n
        row = dict(zip(("epoch", "bound", "inside", "total"), (epoch + 1, *(sums / count))))
        history.append(row)
        log.info("grounder epoch %d bound %.4f inside %.4f", epoch + 1, row["bound"], row["inside"])
        if on_epoch:
            on_epoch(row)
    return history


def predict(model: Grounder, data: corpus.Dataset, n_chunks: int = 8,
            batch_size: int = 32) -> np.ndarray:
    """Top-1 spans (n, 2) for every sample."""
    out = []
    for lo in range(0, len(data), batch_size):
        sl = slice(lo, lo + batch_size)
        p_s, p_e, _ = forward_chunked(model, data.video[sl], data.audio[sl], n_chunks)
        out.append(infer_spans(p_s.data, p_e.data))
    return np.concatenate(out) if out else np.zeros((0, 2), dtype=np.int64)
