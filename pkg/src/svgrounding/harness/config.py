"""Flat run configuration, serialized as JSON."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    corpus_dir: str = ""
    # synthetic corpus, used when corpus_dir is empty
    n_train: int = 64
    n_val: int = 128
    n_test: int = 256
    # model widths
    d: int = 64
    n_v: int = 32
    n_a: int = 256
    # cpc
    cpc_k: int = 4
    cpc_n: int = 16
    cpc_steps: int = 2000
    cpc_batch: int = 8
    pretrain_lr: float = 1e-3
    pretrain_warmup: int = 100
    # vgcl
    kappa: int = 10
    pacing: str = "linear"
    vgcl_steps: int = 2000
    no_curriculum: bool = False
    no_entire_video: bool = False
    no_self_attention: bool = False
    # grounding
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    warmup_steps: int = 50
    n_chunks: int = 8
    # eval
    iou_thresholds: list[float] = field(default_factory=lambda: [0.3, 0.5, 0.7])

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            want = {"int": int, "float": float, "bool": bool, "str": str}.get(f.type)
            if want is float and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
                setattr(self, f.name, value)
            if want and (not isinstance(value, want) or (want is int and isinstance(value, bool))):
                raise ConfigError(f"{f.name} must be {f.type}, got {value!r}")
        if self.cpc_n < 2:
            raise ConfigError("cpc_n counts the positive, so it must be at least 2")
        if min(self.d, self.n_v, self.n_a, self.epochs, self.batch_size, self.kappa) < 1:
            raise ConfigError("sizes and counts must be positive")
        if not all(0 < t <= 1 for t in self.iou_thresholds):
            raise ConfigError("IoU thresholds must lie in (0, 1]")
        self.iou_thresholds = [float(t) for t in self.iou_thresholds]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**raw)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(raw)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_json(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    def replace(self, **changes) -> "RunConfig":
        return RunConfig.from_dict({**asdict(self), **changes})
