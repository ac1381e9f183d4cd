"""Contrastive predictive coding on log-Mel spectrograms."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .numerics import AdamState, adam_step, nn
from .numerics import tensor as T
from .numerics.nn import Module, Parameter
from .numerics.tensor import Tensor

log = logging.getLogger(__name__)

KERNEL = 4


class CpcEncoder(Module):
    """Two stride-2 convolutions with a relu between them: T frames -> ceil(T/4) latents."""

    def __init__(self, n_mel: int, d: int, rng: np.random.Generator):
        self.conv1 = nn.Conv1d(n_mel, d, KERNEL, 2, rng)
        self.conv2 = nn.Conv1d(d, d, KERNEL, 2, rng)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-2] < 4:
            raise ValueError(f"need at least 4 frames to encode, got {x.shape[-2]}")
        return self.conv2(T.relu(self.conv1(x)))


class Cpc(Module):
    def __init__(self, n_mel: int, d: int, k_steps: int, rng: np.random.Generator):
        self.encoder = CpcEncoder(n_mel, d, rng)
        self.context = nn.GRU(d, d, rng)
        self.heads = [nn.glorot(rng, (d, d), d, d) for _ in range(k_steps)]

    @property
    def k_steps(self) -> int:
        return len(self.heads)

    def encode(self, spec) -> Tensor:
        return self.encoder(spec if isinstance(spec, Tensor) else Tensor(spec))

    def contextualize(self, z: Tensor) -> Tensor:
        return self.context(z)


def draw_negatives(rng: np.random.Generator, bsz: int, steps: int, k_steps: int,
                   n_neg: int) -> np.ndarray:
    """Flat (b * steps + t) indices of shape (K, B, steps - K, n_neg).

    For anchor (b, t) and step k the positive position b*steps + t + k is
    never drawn; every other position in the batch is equally likely.
    """
    anchors = steps - k_steps
    total = bsz * steps
    if total < 2:
        raise ValueError("need at least two latent positions to draw negatives")
    out = np.empty((k_steps, bsz, anchors, n_neg), dtype=np.intp)
    base = (np.arange(bsz)[:, None] * steps + np.arange(anchors)[None, :])
    for k in range(1, k_steps + 1):
        pos = (base + k)[..., None]
        draw = rng.integers(0, total - 1, size=(bsz, anchors, n_neg))
        out[k - 1] = draw + (draw >= pos)
    return out


@dataclass
class InfoNceResult:
    loss: Tensor
    accuracy: float


def infonce(c: Tensor, z: Tensor, heads, n_negatives: int, rng: np.random.Generator | None = None,
            negatives: np.ndarray | None = None) -> InfoNceResult:
    """Mean over anchors t and steps k of -log softmax(z_j^T W_k c_t)[positive].

    ``c`` and ``z`` are (B, T', d); candidates are the positive z_{t+k}
    followed by ``n_negatives`` draws from the whole batch.
    """
    k_steps = len(heads)
    bsz, steps, d = z.shape
    if steps <= k_steps:
        raise ValueError(f"sequence of {steps} latents is too short for {k_steps} prediction steps")
    anchors = steps - k_steps
    if negatives is None:
        negatives = draw_negatives(rng, bsz, steps, k_steps, n_negatives)
    z_flat = T.reshape(z, (bsz * steps, d))
    c_anchor = T.reshape(c[:, :anchors], (bsz * anchors, d))
    base = np.arange(bsz)[:, None] * steps + np.arange(anchors)[None, :]
    rows = np.arange(bsz * anchors).reshape(bsz, anchors, 1)
    terms = []
    correct = 0
    for k in range(1, k_steps + 1):
        cols = np.concatenate([(base + k)[..., None], negatives[k - 1]], axis=-1)
        # every anchor against every latent, then pick the candidates
        pred = T.matmul(c_anchor, T.swapaxes(heads[k - 1], 0, 1))
        all_scores = T.matmul(pred, T.swapaxes(z_flat, 0, 1))
        scores = all_scores[np.broadcast_to(rows, cols.shape), cols]  # (B, A, N)
        terms.append(T.log_softmax(scores, -1)[..., 0])
        s = scores.data
        correct += int(np.sum(s[..., 0] > s[..., 1:].max(axis=-1)))
    loss = -T.mean(T.stack(terms, 0))
    return InfoNceResult(loss, correct / (k_steps * bsz * anchors))


def cpc_loss(model: Cpc, audio: np.ndarray, n_negatives: int, rng) -> InfoNceResult:
    z = model.encode(audio)
    return infonce(model.contextualize(z), z, model.heads, n_negatives, rng)


@dataclass
class PretrainConfig:
    steps: int = 2000
    batch_size: int = 8
    n_negatives: int = 15
    lr: float = 1e-3
    warmup_steps: int = 100
    log_every: int = 100


def sample_batch(rng: np.random.Generator, n: int, batch_size: int) -> np.ndarray:
    return rng.choice(n, size=min(batch_size, n), replace=False)


def pretrain(model: Cpc, audio: np.ndarray, cfg: PretrainConfig, rng_batches, rng_negatives,
             on_log=None) -> list[dict]:
    """Optimize the InfoNCE objective on (n, T, n_mel) spectrograms; returns the log rows."""
    if len(audio) == 0:
        raise ValueError("empty pretraining set")
    params = model.named_parameters()
    opt = AdamState(base_lr=cfg.lr, warmup_steps=cfg.warmup_steps)
    history = []
    run_loss = run_acc = 0.0
    for step in range(1, cfg.steps + 1):
        idx = sample_batch(rng_batches, len(audio), cfg.batch_size)
        res = cpc_loss(model, audio[idx], cfg.n_negatives, rng_negatives)
        model.zero_grad()
        res.loss.backward()
        adam_step(opt, params)
        run_loss += res.loss.item()
        run_acc += res.accuracy
        if step % cfg.log_every == 0 or step == cfg.steps:
            n = (step - 1) % cfg.log_every + 1
            row = {"step": step, "loss": run_loss / n, "acc": run_acc / n}
            history.append(row)
            log.info("cpc step %d loss %.4f acc %.3f", step, row["loss"], row["acc"])
            if on_log:
                on_log(row)
            run_loss = run_acc = 0.0
    return history


def evaluate(model: Cpc, audio: np.ndarray, n_negatives: int, rng, batch_size: int = 8) -> dict:
    losses, accs = [], []
    for lo in range(0, len(audio), batch_size):
        chunk = audio[lo:lo + batch_size]
        if len(chunk) < 1:
            continue
        res = cpc_loss(model, chunk, n_negatives, rng)
        losses.append(res.loss.item())
        accs.append(res.accuracy)
    return {"loss": float(np.mean(losses)), "acc": float(np.mean(accs))}


def transferable(model: Module, prefix: str) -> dict[str, Parameter]:
    """Encoder and context parameters under ``prefix``; heads and any guide stay behind."""
    keep = (f"{prefix}.encoder.", f"{prefix}.context.")
    return {k: v for k, v in model.named_parameters(prefix).items() if k.startswith(keep)}
