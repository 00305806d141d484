"""Temporal IoU and Rank k@mu metrics."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError

SWEEP_GRID = tuple(round(0.05 * i, 2) for i in range(1, 20))
DEFAULT_KS = (1, 5)
DEFAULT_MUS = (0.3, 0.5, 0.7)


def _bounds(span) -> tuple[float, float]:
    if hasattr(span, "t_s"):
        return float(span.t_s), float(span.t_e)
    return float(span[0]), float(span[1])


def temporal_iou(a, b) -> float:
    a_s, a_e = _bounds(a)
    b_s, b_e = _bounds(b)
    inter = max(0.0, min(a_e, b_e) - max(a_s, b_s))
    union = max(a_e, b_e) - min(a_s, b_s)
    return inter / union if union > 0 else 0.0


def iou_matrix(spans: np.ndarray, gt) -> np.ndarray:
    """IoU of each row of an (M, 2) span array against one ground truth."""
    g_s, g_e = _bounds(gt)
    spans = np.asarray(spans, dtype=np.float64).reshape(-1, 2)
    inter = np.clip(np.minimum(spans[:, 1], g_e) - np.maximum(spans[:, 0], g_s), 0.0, None)
    union = np.maximum(spans[:, 1], g_e) - np.minimum(spans[:, 0], g_s)
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def _top_ious(predictions: Mapping | Sequence, ground_truths: Mapping | Sequence, k: int) -> list[np.ndarray]:
    if isinstance(predictions, Mapping):
        keys = list(predictions)
        if not isinstance(ground_truths, Mapping):
            raise DataError("ground truths must be keyed like predictions")
        missing = [key for key in keys if key not in ground_truths]
        if missing:
            raise DataError(f"missing ground truth for {missing[:5]}")
        pairs = [(predictions[key], ground_truths[key]) for key in keys]
    else:
        if len(predictions) != len(ground_truths):
            raise DataError(f"{len(predictions)} prediction lists but {len(ground_truths)} ground truths")
        pairs = list(zip(predictions, ground_truths))
    out = []
    for preds, gt in pairs:
        if gt is None:
            raise DataError("missing ground truth")
        spans = [_bounds(getattr(p, "span", p)) for p in list(preds)[:k]]
        if not spans:
            raise DataError("sample without predictions")
        out.append(iou_matrix(np.asarray(spans), gt))
    return out


def rank_k_at_mu(predictions, ground_truths, k: int, mu: float) -> float:
    """Percentage of samples with some top-``k`` prediction of IoU strictly above ``mu``."""
    ious = _top_ious(predictions, ground_truths, k)
    if not ious:
        return 0.0
    hits = sum(bool((x > mu).any()) for x in ious)
    return 100.0 * hits / len(ious)


@dataclass
class MetricReport:
    table: dict[tuple[int, float], float] = field(default_factory=dict)
    iou_sweep: list[tuple[float, float]] = field(default_factory=list)
    sample_count: int = 0

    def get(self, k: int, mu: float) -> float:
        return self.table[(k, round(mu, 2))]

    def write_metrics_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "mu", "percentage", "samples"])
            for (k, mu), v in sorted(self.table.items()):
                w.writerow([k, f"{mu:.2f}", f"{v:.4f}", self.sample_count])

    def write_sweep_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["mu", "rank1"])
            for mu, v in self.iou_sweep:
                w.writerow([f"{mu:.2f}", f"{v:.4f}"])

    def to_dict(self) -> dict:
        return {
            "sample_count": self.sample_count,
            "table": {f"R{k}@{mu:.2f}": v for (k, mu), v in sorted(self.table.items())},
            "iou_sweep": [[mu, v] for mu, v in self.iou_sweep],
        }


def iou_sweep(predictions, ground_truths, grid: Sequence[float] = SWEEP_GRID) -> list[tuple[float, float]]:
    ious = _top_ious(predictions, ground_truths, 1)
    n = len(ious)
    top1 = np.array([x[0] for x in ious])
    return [(float(mu), 100.0 * float((top1 > mu).sum()) / n if n else 0.0) for mu in grid]


def build_report(predictions, ground_truths, ks=DEFAULT_KS, mus=DEFAULT_MUS, grid=SWEEP_GRID) -> MetricReport:
    table = {(k, round(mu, 2)): rank_k_at_mu(predictions, ground_truths, k, mu) for k in ks for mu in mus}
    return MetricReport(table, iou_sweep(predictions, ground_truths, grid), len(predictions))
