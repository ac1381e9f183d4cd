"""Merge per-variant reports into CSV tables and render figures."""
from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path

import numpy as np

from .metrics import EvalReport

METRIC_COLUMNS = ("variant", "seed", "iou_0.3", "iou_0.5", "iou_0.7", "miou")
LONG_COLUMNS = ("variant", "seed", "metric", "value")


def collect(root) -> list[EvalReport]:
    """Every report.json below ``root``, sorted by (variant, seed)."""
    reports = [EvalReport.from_dict(json.loads(p.read_text()))
               for p in sorted(Path(root).rglob("report.json"))]
    return sorted(reports, key=lambda r: (r.variant, r.seed))


def metric_rows(reports) -> list[dict]:
    return [r.row() for r in reports]


def long_rows(reports) -> list[dict]:
    out = []
    for r in reports:
        for key, value in r.row().items():
            if key not in ("variant", "seed"):
                out.append({"variant": r.variant, "seed": r.seed, "metric": key, "value": value})
    return out


def _write(path: Path, rows, columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n",
                           extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(float(v)) if isinstance(v, float) else v for k, v in row.items()})


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (v if k == "variant" else int(v) if k == "seed" else float(v))
             for k, v in row.items()} for row in rows]


def medians(reports) -> dict[str, float]:
    by = defaultdict(list)
    for r in reports:
        by[r.variant].append(r.mean_iou)
    return {k: float(np.median(v)) for k, v in sorted(by.items())}


def _plot_miou(reports, path: Path, reference: float | None) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    med = medians(reports)
    names = list(med)
    fig, ax = plt.subplots(figsize=(1.4 * len(names) + 2, 3.6))
    ax.bar(range(len(names)), [med[n] for n in names], color="#8fb3d9", label="median")
    for i, n in enumerate(names):
        pts = [r.mean_iou for r in reports if r.variant == n]
        ax.scatter([i] * len(pts), pts, color="#1f3b5c", s=14, zorder=3)
    if reference is not None:
        ax.axhline(reference, color="#b03a2e", ls="--", lw=1, label="random span")
    ax.set_xticks(range(len(names)), names, rotation=20)
    ax.set_ylabel("mIoU (%)")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_recall(reports, path: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4.6, 3.4))
    by = defaultdict(list)
    for r in reports:
        by[r.variant].append(r)
    for name, rs in sorted(by.items()):
        ths = sorted(rs[0].recall, key=float)
        ax.plot([float(t) for t in ths], [np.median([r.recall[t] for r in rs]) for t in ths],
                marker="o", label=name)
    ax.set_xlabel("IoU threshold")
    ax.set_ylabel("R@1 (%)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_curricula(root: Path, path: Path) -> bool:
    logs = sorted(root.rglob("curriculum.csv"))
    if not logs:
        return False
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    for p in logs:
        rows = _read_floats(p)
        ax.plot([r["step"] for r in rows], [r["loss"] for r in rows], lw=1,
                label=str(p.parent.relative_to(root)))
    ax.set_xlabel("step")
    ax.set_ylabel("guided InfoNCE loss")
    ax.legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return True


def _read_floats(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def write_report(root, out_dir, reference: float | None = None) -> dict[str, Path]:
    """metrics.csv, metrics_long.csv and figures for every report under ``root``."""
    root, out_dir = Path(root), Path(out_dir)
    reports = collect(root)
    if not reports:
        raise FileNotFoundError(f"no report.json found under {root}")
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"metrics": out_dir / "metrics.csv", "long": out_dir / "metrics_long.csv",
             "miou_png": out_dir / "miou.png", "recall_png": out_dir / "recall.png"}
    _write(paths["metrics"], metric_rows(reports), METRIC_COLUMNS)
    _write(paths["long"], long_rows(reports), LONG_COLUMNS)
    _plot_miou(reports, paths["miou_png"], reference)
    _plot_recall(reports, paths["recall_png"])
    if _plot_curricula(root, out_dir / "curriculum.png"):
        paths["curriculum_png"] = out_dir / "curriculum.png"
    return paths
