"""Segmentation losses, overlap metrics and the PCA feature-distribution report."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError
from .tensor import Tensor, as_tensor, reduce, sigmoid, softplus

DICE_SMOOTH = 1.0
METRIC_NAMES = ("DSC", "IoU", "accuracy", "recall", "precision")


def ce_loss(logits, target) -> Tensor:
    """Mean binary cross-entropy with logits: softplus(z) - z * y."""
    z, y = as_tensor(logits), as_tensor(target)
    if z.shape != y.shape:
        raise DimensionError(f"ce_loss: logits {z.shape} vs target {y.shape}")
    return reduce("mean", softplus(z) - z * y)


def dice_loss(logits, target, smooth: float = DICE_SMOOTH) -> Tensor:
    z, y = as_tensor(logits), as_tensor(target)
    if z.shape != y.shape:
        raise DimensionError(f"dice_loss: logits {z.shape} vs target {y.shape}")
    p = sigmoid(z)
    inter = reduce("sum", p * y)
    return 1.0 - (2.0 * inter + smooth) / (reduce("sum", p) + float(y.data.sum()) + smooth)


def seg_loss(ce, dice, w_ce: float = 0.5, w_dice: float = 0.5):
    return w_ce * ce + w_dice * dice


# metrics ------------------------------------------------------------------------

@dataclass(frozen=True)
class ConfusionCounts:
    TP: int
    FP: int
    FN: int
    TN: int

    @property
    def total(self) -> int:
        return self.TP + self.FP + self.FN + self.TN


def confusion(pred, target) -> ConfusionCounts:
    pred, target = np.asarray(pred).astype(bool), np.asarray(target).astype(bool)
    if pred.shape != target.shape:
        raise DimensionError(f"metrics: pred {pred.shape} vs target {target.shape}")
    tp = int(np.count_nonzero(pred & target))
    fp = int(np.count_nonzero(pred & ~target))
    fn = int(np.count_nonzero(~pred & target))
    return ConfusionCounts(tp, fp, fn, pred.size - tp - fp - fn)


def _ratio(num: int, den: int) -> float:
    # 0/0 only happens when both masks are empty for this ratio
    return 1.0 if den == 0 else num / den


def metrics(pred, target) -> dict[str, float]:
    """DSC, IoU, accuracy, recall and precision for binary masks."""
    c = confusion(pred, target)
    return {
        "DSC": _ratio(2 * c.TP, 2 * c.TP + c.FP + c.FN),
        "IoU": _ratio(c.TP, c.TP + c.FP + c.FN),
        "accuracy": (c.TP + c.TN) / c.total,
        "recall": c.TP / (c.TP + c.FN) if c.TP + c.FN else float(c.FP == 0),
        "precision": c.TP / (c.TP + c.FP) if c.TP + c.FP else float(c.FN == 0),
    }


def write_per_sample_metrics(rows, path) -> None:
    """``rows`` are ``(sample_id, metrics_dict)`` pairs."""
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("sample_id",) + METRIC_NAMES)
        for sid, m in rows:
            w.writerow([sid, *(repr(float(m[k])) for k in METRIC_NAMES)])


def read_per_sample_metrics(path) -> list[tuple[int, dict[str, float]]]:
    with open(Path(path), newline="") as fh:
        return [(int(r["sample_id"]), {k: float(r[k]) for k in METRIC_NAMES})
                for r in csv.DictReader(fh)]


# PCA distribution ------------------------------------------------------------------

NUM_BINS = 20


@dataclass
class DistributionReport:
    bin_edges: np.ndarray
    fg_counts: np.ndarray
    bg_counts: np.ndarray
    degenerate: bool = False

    def rows(self):
        for i in range(len(self.fg_counts)):
            yield self.bin_edges[i], self.bin_edges[i + 1], int(self.fg_counts[i]), int(self.bg_counts[i])

    def write_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("bin_lo", "bin_hi", "fg_count", "bg_count"))
            for lo, hi, f, b in self.rows():
                w.writerow([repr(float(lo)), repr(float(hi)), f, b])


def first_principal_component(features: np.ndarray, iterations: int = 100, seed: int = 0,
                              start: np.ndarray | None = None) -> np.ndarray | None:
    """Leading eigenvector of the centered covariance by power iteration.

    The sign is fixed so the largest-magnitude loading is positive. Returns
    ``None`` when the covariance is zero (constant features).
    """
    x = np.asarray(features, dtype=np.float64)
    x = x - x.mean(axis=0)
    cov = x.T @ x / max(len(x) - 1, 1)
    if not np.any(cov):
        return None
    v = np.random.default_rng(seed).standard_normal(cov.shape[0]) if start is None else start
    v = np.asarray(v, dtype=np.float64) / np.linalg.norm(v)
    for _ in range(iterations):
        w = cov @ v
        n = np.linalg.norm(w)
        if n == 0:
            return None
        v = w / n
    k = int(np.argmax(np.abs(v)))
    return -v if v[k] < 0 else v


def pca_distribution(features, mask, patch_size: int | None = None, iterations: int = 100,
                     seed: int = 0, start=None) -> DistributionReport:
    """Histogram of min-max normalized first-PC scores, split by mask value.

    ``features`` is either ``n x D`` with an ``n``-element mask, or
    ``B x N x D`` patch features with a ``B x H x W`` mask and ``patch_size``;
    in the latter case each patch score is repeated over its pixels.
    """
    f = np.asarray(features.data if isinstance(features, Tensor) else features, dtype=np.float64)
    m = np.asarray(mask).astype(bool)
    if f.ndim == 3:
        if patch_size is None:
            raise DimensionError("patch features need patch_size")
        b, n, d = f.shape
        g = int(round(np.sqrt(n)))
        if m.shape != (b, g * patch_size, g * patch_size):
            raise DimensionError(f"mask {m.shape} does not cover {n} patches of {patch_size}px")
        flat = f.reshape(-1, d)
    else:
        if m.reshape(-1).shape[0] != f.shape[0]:
            raise DimensionError(f"mask has {m.size} entries for {f.shape[0]} feature rows")
        flat = f if f.ndim == 2 else f.reshape(-1, 1)

    edges = np.linspace(0.0, 1.0, NUM_BINS + 1)
    pc = first_principal_component(flat, iterations, seed, start)
    if pc is None:
        warnings.warn("features are constant; reporting a single-bin distribution", stacklevel=2)
        fg = np.zeros(NUM_BINS, dtype=np.int64)
        bg = np.zeros(NUM_BINS, dtype=np.int64)
        fg[0], bg[0] = int(m.sum()), int((~m).sum())
        return DistributionReport(edges, fg, bg, degenerate=True)

    s = (flat - flat.mean(axis=0)) @ pc
    lo, hi = s.min(), s.max()
    s = (s - lo) / (hi - lo) if hi > lo else np.zeros_like(s)
    if f.ndim == 3:
        s = s.reshape(b, g, g)
        s = np.repeat(np.repeat(s, patch_size, axis=1), patch_size, axis=2)
    s, mflat = s.reshape(-1), m.reshape(-1)
    bins = np.minimum((s * NUM_BINS).astype(np.int64), NUM_BINS - 1)
    fg = np.bincount(bins[mflat], minlength=NUM_BINS)
    bg = np.bincount(bins[~mflat], minlength=NUM_BINS)
    return DistributionReport(edges, fg, bg)
