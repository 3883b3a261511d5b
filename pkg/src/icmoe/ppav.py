"""Pixel probability adaptive voting.

Per sample, one candidate among basic (0), semantic (1) and fusion (3) is
chosen by mask agreement with the ground truth (training) or with a pixelwise
majority vote of the candidates (inference). A per-batch usage cap keeps any
one candidate from taking every sample. The chosen logits are added to the
adaptive expert's (2) logits with weight ``fusion_alpha``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, DimensionError

CANDIDATES = (0, 1, 3)


def binarize(logits) -> np.ndarray:
    """1 where the logit is >= 0 (sigmoid >= 0.5), else 0."""
    return (np.asarray(logits) >= 0).astype(np.uint8)


def _require_binary(*masks) -> None:
    for m in masks:
        m = np.asarray(m)
        if not np.all((m == 0) | (m == 1)):
            raise ContractError("mask contains values other than 0 and 1")


def pseudo_gt(m0, m1, m3) -> np.ndarray:
    """Pixelwise majority of the three candidate masks."""
    m0, m1, m3 = (np.asarray(m) for m in (m0, m1, m3))
    if not m0.shape == m1.shape == m3.shape:
        raise DimensionError(f"pseudo_gt: shapes {m0.shape}, {m1.shape}, {m3.shape} differ")
    _require_binary(m0, m1, m3)
    votes = m0.astype(np.int64) + m1.astype(np.int64) + m3.astype(np.int64)
    return (votes > 1).astype(np.uint8)


def score(mask, ref) -> float:
    """Fraction of pixels where ``mask`` agrees with ``ref``."""
    mask, ref = np.asarray(mask), np.asarray(ref)
    if mask.shape != ref.shape:
        raise DimensionError(f"score: shapes {mask.shape} and {ref.shape} differ")
    _require_binary(mask, ref)
    diff = np.abs(ref.astype(np.int64) - mask.astype(np.int64)).sum()
    return 1.0 - diff / mask.size


@dataclass
class SelectionState:
    n_threshold: int | None = None
    fusion_alpha: float = 0.5
    counts: dict[int, int] = field(default_factory=lambda: {e: 0 for e in CANDIDATES})

    def reset(self) -> None:
        self.counts = {e: 0 for e in CANDIDATES}


def select_balanced(scores, state: SelectionState) -> int:
    """Pick the best-scoring candidate whose usage count is within the cap.

    ``scores`` is ordered as candidates (0, 1, 3). Ties go to the earlier
    candidate. A candidate over the cap is rejected (its score zeroed) and the
    argmax retaken; if every candidate is rejected the least-used one wins.
    """
    if len(scores) != len(CANDIDATES):
        raise ContractError(f"expected {len(CANDIDATES)} scores, got {len(scores)}")
    if state.n_threshold is None:
        raise ContractError("n_threshold is not set")
    s = [float(v) for v in scores]
    rejected: set[int] = set()
    while len(rejected) < len(CANDIDATES):
        live = [i for i in range(len(CANDIDATES)) if i not in rejected]
        best = max(live, key=lambda i: (s[i], -i))
        e = CANDIDATES[best]
        if state.counts[e] <= state.n_threshold:
            break
        s[best] = 0.0
        rejected.add(best)
    else:
        e = min(CANDIDATES, key=lambda c: (state.counts[c], CANDIDATES.index(c)))
    state.counts[e] += 1
    return e


def fuse(p2, pe, fusion_alpha: float):
    """Logit-space fusion ``p2 + fusion_alpha * pe`` (arrays or tensors)."""
    if not hasattr(p2, "shape"):
        p2, pe = np.asarray(p2, dtype=np.float64), np.asarray(pe, dtype=np.float64)
    if p2.shape != pe.shape:
        raise DimensionError(f"fuse: shapes {p2.shape} and {pe.shape} differ")
    return p2 + fusion_alpha * pe


@dataclass
class PredictionSet:
    """Per-sample logits for sources 0..3 and the reference masks.

    ``P`` maps source index to a B x H x W logit array.
    """

    P: dict[int, np.ndarray]
    GT: np.ndarray | None = None
    PGT: np.ndarray | None = None

    def __post_init__(self):
        missing = [e for e in (0, 1, 2, 3) if e not in self.P]
        if missing:
            raise ContractError(f"prediction set lacks sources {missing}")
        self.P = {e: np.asarray(v, dtype=np.float64) for e, v in self.P.items()}
        shape = self.P[2].shape
        for e, v in self.P.items():
            if v.shape != shape:
                raise DimensionError(f"source {e} has shape {v.shape}, expected {shape}")
        self.M = {e: binarize(v) for e, v in self.P.items()}

    @property
    def batch_size(self) -> int:
        return self.P[2].shape[0]


@dataclass
class SelectionRecord:
    sample_id: int
    scores: tuple[float, float, float]
    chosen: int
    count_after: int


@dataclass
class PPAVResult:
    fused: np.ndarray
    chosen: list[int]
    log: list[SelectionRecord]
    counts: dict[int, int]


def ppav_batch(preds: PredictionSet, state: SelectionState, mode: str = "inference",
               balance: bool = True, reset_counts: bool = True,
               sample_ids=None) -> PPAVResult:
    """Select and fuse one candidate per sample, in ascending sample order.

    Counts are reset at the start of the batch unless ``reset_counts`` is
    false. When ``state.n_threshold`` is unset the cap is ``ceil(B / 3)`` for
    this batch only. ``balance=False`` disables the cap (plain argmax).
    """
    if mode not in ("training", "inference"):
        raise ContractError(f"mode must be 'training' or 'inference', got {mode!r}")
    b = preds.batch_size
    if mode == "training":
        if preds.GT is None:
            raise ContractError("training mode needs ground truth")
        ref = np.asarray(preds.GT)
        if ref.shape != preds.P[2].shape:
            raise DimensionError(f"GT shape {ref.shape} does not match logits {preds.P[2].shape}")
    else:
        ref = pseudo_gt(preds.M[0], preds.M[1], preds.M[3])
        preds.PGT = ref
    if reset_counts:
        state.reset()
    threshold = state.n_threshold if state.n_threshold is not None else math.ceil(b / 3)
    cap = SelectionState(threshold if balance else b + 1, state.fusion_alpha, state.counts)
    ids = list(range(b)) if sample_ids is None else list(sample_ids)

    fused = np.empty_like(preds.P[2])
    chosen, log = [], []
    for i in range(b):
        s = tuple(score(preds.M[e][i], ref[i]) for e in CANDIDATES)
        e = select_balanced(s, cap)
        fused[i] = fuse(preds.P[2][i], preds.P[e][i], state.fusion_alpha)
        chosen.append(e)
        log.append(SelectionRecord(ids[i], s, e, cap.counts[e]))
    return PPAVResult(fused, chosen, log, dict(state.counts))


LOG_HEADER = ("sample_id", "score_0", "score_1", "score_3", "chosen", "count_after")


def write_selection_log(records, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_HEADER)
        for r in records:
            w.writerow([r.sample_id, *(repr(float(x)) for x in r.scores), r.chosen, r.count_after])


def read_selection_log(path) -> list[SelectionRecord]:
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [SelectionRecord(int(r["sample_id"]),
                            (float(r["score_0"]), float(r["score_1"]), float(r["score_3"])),
                            int(r["chosen"]), int(r["count_after"])) for r in rows]
