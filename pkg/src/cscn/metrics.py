"""Confusion-matrix accounting and the scalar scores derived from it.

Conventions: rows index the true class, columns the predicted class, both
1-based in the rasters and 0-based in the matrix. Only labeled pixels
inside the evaluation region are counted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import EmptyRegion, ShapeMismatch


@dataclass(frozen=True)
class ConfusionMatrix:
    """(C, C) int64 count matrix, rows = true class, cols = predicted."""

    counts: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.counts, dtype=np.int64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"confusion matrix must be square, got {arr.shape}")
        if (arr < 0).any():
            raise ValueError("confusion matrix counts must be >= 0")
        object.__setattr__(self, "counts", arr)

    @property
    def class_count(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self) -> str:
        header = "true\\pred," + ",".join(str(c + 1) for c in range(self.class_count))
        rows = [
            f"{r + 1}," + ",".join(str(int(v)) for v in self.counts[r])
            for r in range(self.class_count)
        ]
        return "\n".join([header] + rows) + "\n"


def confusion(pred: np.ndarray, truth: np.ndarray, region: np.ndarray,
              class_count: int) -> ConfusionMatrix:
    """Count (true, pred) pairs over labeled pixels inside region.

    pred and truth are (H, W) rasters with values in 1..class_count
    (truth may use 0 for background, which is skipped); region is a
    boolean raster selecting the pixels to score.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    region = np.asarray(region, dtype=bool)
    if pred.shape != truth.shape or pred.shape != region.shape:
        raise ShapeMismatch(
            f"pred {pred.shape}, truth {truth.shape}, region {region.shape} differ"
        )
    pick = region & (truth > 0)
    if not pick.any():
        raise EmptyRegion("no labeled pixels inside the evaluation region")
    t = truth[pick].astype(np.int64)
    p = pred[pick].astype(np.int64)
    if p.min() < 1 or p.max() > class_count or t.max() > class_count:
        raise ValueError("class index outside 1..class_count")
    counts = np.zeros((class_count, class_count), dtype=np.int64)
    np.add.at(counts, (t - 1, p - 1), 1)
    return ConfusionMatrix(counts)


@dataclass(frozen=True)
class EvalReport:
    """Scores of one evaluation: overall/average accuracy, Cohen's kappa,
    per-class F1, and their mean over classes with support."""

    oa: float
    aa: float
    kappa: float
    f1: tuple
    cf1: float
    support: tuple

    def to_dict(self) -> dict:
        return {
            "oa": self.oa,
            "aa": self.aa,
            "kappa": self.kappa,
            "cf1": self.cf1,
            "f1": list(self.f1),
            "support": list(self.support),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def table(self) -> str:
        lines = [
            f"{'class':>8} {'support':>9} {'f1':>8}",
        ]
        for i, (f, s) in enumerate(zip(self.f1, self.support)):
            lines.append(f"{i + 1:>8d} {s:>9d} {f:>8.4f}")
        lines.append("")
        lines.append(f"OA    {self.oa:.4f}")
        lines.append(f"AA    {self.aa:.4f}")
        lines.append(f"Kappa {self.kappa:.4f}")
        lines.append(f"CF1   {self.cf1:.4f}")
        return "\n".join(lines) + "\n"


def report(cm: ConfusionMatrix) -> EvalReport:
    """Derive all scores from one confusion matrix.

    Zero-support classes are excluded from AA and CF1; a class whose
    precision and recall are both zero scores F1 = 0. Kappa degenerates
    to 0 when chance agreement is 1.
    """
    counts = cm.counts.astype(np.float64)
    total = counts.sum()
    if total == 0:
        raise EmptyRegion("confusion matrix is empty")

    row = counts.sum(axis=1)  # true-class totals (support)
    col = counts.sum(axis=0)  # predicted-class totals
    diag = np.diag(counts)

    oa = float(diag.sum() / total)

    supported = row > 0
    recall = np.zeros_like(row)
    recall[supported] = diag[supported] / row[supported]
    aa = float(recall[supported].mean())

    p_e = float((row * col).sum() / (total * total))
    kappa = 0.0 if p_e >= 1.0 else float((oa - p_e) / (1.0 - p_e))

    precision = np.where(col > 0, diag / np.maximum(col, 1), 0.0)
    denom = precision + recall
    f1 = np.where(denom > 0, 2.0 * precision * recall / np.maximum(denom, 1e-300), 0.0)
    cf1 = float(f1[supported].mean())

    return EvalReport(
        oa=oa,
        aa=aa,
        kappa=kappa,
        f1=tuple(float(v) for v in f1),
        cf1=cf1,
        support=tuple(int(v) for v in row),
    )
