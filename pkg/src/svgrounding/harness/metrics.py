"""Temporal IoU, recall at IoU thresholds, and the random-span reference."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

THRESHOLDS = (0.3, 0.5, 0.7)


def iou(pred, gt) -> float:
    """IoU of two inclusive frame spans."""
    (s, e), (gs, ge) = pred, gt
    if s > e or gs > ge:
        raise ValueError(f"invalid span: {pred} vs {gt}")
    inter = min(e, ge) - max(s, gs) + 1
    if inter <= 0:
        return 0.0
    return inter / (max(e, ge) - min(s, gs) + 1)


def iou_many(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    pred, gt = np.asarray(pred).reshape(-1, 2), np.asarray(gt).reshape(-1, 2)
    if np.any(pred[:, 0] > pred[:, 1]) or np.any(gt[:, 0] > gt[:, 1]):
        raise ValueError("invalid span with start after end")
    inter = np.minimum(pred[:, 1], gt[:, 1]) - np.maximum(pred[:, 0], gt[:, 0]) + 1
    union = np.maximum(pred[:, 1], gt[:, 1]) - np.minimum(pred[:, 0], gt[:, 0]) + 1
    return np.clip(inter, 0, None) / union


@dataclass
class EvalReport:
    variant: str
    seed: int
    n_samples: int
    recall: dict[str, float] = field(default_factory=dict)
    mean_iou: float = 0.0

    def row(self) -> dict:
        out = {"variant": self.variant, "seed": self.seed}
        out.update({f"iou_{k}": v for k, v in self.recall.items()})
        out["miou"] = self.mean_iou
        return out

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "EvalReport":
        return cls(raw["variant"], int(raw["seed"]), int(raw["n_samples"]),
                   {str(k): float(v) for k, v in raw["recall"].items()}, float(raw["mean_iou"]))


def evaluate_spans(pred: np.ndarray, gt: np.ndarray, variant: str = "", seed: int = 0,
                   thresholds=THRESHOLDS) -> EvalReport:
    """R@1 at each IoU threshold and mIoU, all in percent."""
    if len(gt) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    ious = iou_many(pred, gt)
    recall = {str(m): float(100.0 * np.mean(ious >= m)) for m in sorted(thresholds)}
    return EvalReport(variant, seed, len(gt), recall, float(100.0 * ious.mean()))


def all_spans(n_v: int) -> np.ndarray:
    s, e = np.triu_indices(n_v)
    return np.stack([s, e], axis=1)


def random_span_miou(gt: np.ndarray, n_v: int) -> float:
    """Expected mIoU (percent) of a predictor drawing spans uniformly over all s <= e."""
    cands = all_spans(n_v)
    return float(100.0 * np.mean([iou_many(cands, np.broadcast_to(g, cands.shape)).mean()
                                  for g in np.asarray(gt).reshape(-1, 2)]))


def random_span_report(gt: np.ndarray, n_v: int, rng: np.random.Generator, draws: int = 100_000,
                       seed: int = 0, thresholds=THRESHOLDS) -> EvalReport:
    """Monte-Carlo version: ``draws`` uniform valid spans matched against random samples."""
    gt = np.asarray(gt).reshape(-1, 2)
    cands = all_spans(n_v)
    pred = cands[rng.integers(0, len(cands), size=draws)]
    target = gt[rng.integers(0, len(gt), size=draws)]
    return evaluate_spans(pred, target, "random", seed, thresholds)
