"""Semantic-guided contrastive loss.

Three feature distances are combined into one ratio that is minimized:

* ``L1``: foreground vs background features of every source (pushed apart),
* ``L2``: image features of the other sources vs an anchor (pulled together),
* ``L3``: image features of two sources vs a second anchor (pushed apart),

and ``L_sgcl = L2 / (L1 + L3 + epsilon)``.

Each distance projects both sides with its own affine map, L2-normalizes the
projected vectors along the channel axis and takes the mean absolute
difference over batch, patches and channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError
from .experts import FUSION
from .tensor import Tensor, absolute, l2_normalize, linear, reduce

# source indices per term: (sources compared, anchor)
EQUATION_ANCHORS = {"L2": ((0, 1, 3), 2), "L3": ((1, 3), 0)}
# the prose reading swaps the roles of the basic and adaptive experts
PROSE_ANCHORS = {"L2": ((1, 2, 3), 0), "L3": ((1, 3), 2)}


class SgclProjections:
    """The three trainable projections and the ratio floor ``epsilon``."""

    def __init__(self, embed_dim: int, proj_dim: int | None = None, epsilon: float = 1e-8,
                 seed: int = 0, zero_bias: bool = True):
        if epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        self.embed_dim = embed_dim
        self.proj_dim = proj_dim or max(1, embed_dim // 2)
        self.epsilon = float(epsilon)
        rng = np.random.default_rng(seed)
        bound = np.sqrt(1.0 / embed_dim)
        self.params: dict[str, Tensor] = {}
        for k in ("W1", "W2", "W3"):
            w = rng.uniform(-bound, bound, size=(embed_dim, self.proj_dim))
            self.params[f"{k}.weight"] = Tensor(w, requires_grad=True)
            b = np.zeros(self.proj_dim) if zero_bias else rng.uniform(-bound, bound, self.proj_dim)
            self.params[f"{k}.bias"] = Tensor(b, requires_grad=True)

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], epsilon: float = 1e-8):
        w = arrays["W1.weight"]
        proj = cls(w.shape[0], w.shape[1], epsilon)
        for name, t in proj.params.items():
            t.data = np.array(arrays[name], dtype=np.float64)
        return proj

    def map(self, key: str) -> tuple[Tensor, Tensor]:
        return self.params[f"{key}.weight"], self.params[f"{key}.bias"]


def _projected_distance(a: Tensor, b: Tensor, proj) -> Tensor:
    w, bias = proj
    pa = l2_normalize(linear(a, w, bias), axis=-1)
    pb = l2_normalize(linear(b, w, bias), axis=-1)
    return reduce("mean", absolute(pa - pb))


def _mean(terms: list[Tensor]) -> Tensor:
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total / float(len(terms))


def loss_semantic(y_fg, y_bg, proj) -> Tensor:
    """Mean foreground/background distance over sources 0..3.

    ``y_fg`` and ``y_bg`` are sequences indexed by source, fusion last.
    """
    if len(y_fg) != 4 or len(y_bg) != 4 or any(y is None for y in (*y_fg, *y_bg)):
        raise ContractError("loss_semantic needs foreground and background features "
                            "for all four sources, fusion included")
    return _mean([_projected_distance(f, b, proj) for f, b in zip(y_fg, y_bg)])


def _anchored(y_img, sources, anchor, proj) -> Tensor:
    return _mean([_projected_distance(y_img[j], y_img[anchor], proj) for j in sources])


def loss_consistency(y_img, proj, anchors=EQUATION_ANCHORS) -> Tensor:
    sources, anchor = anchors["L2"]
    return _anchored(y_img, sources, anchor, proj)


def loss_diversity(y_img, proj, anchors=EQUATION_ANCHORS) -> Tensor:
    sources, anchor = anchors["L3"]
    return _anchored(y_img, sources, anchor, proj)


def sgcl_loss(l1, l2, l3, epsilon: float = 1e-8):
    return l2 / (l1 + l3 + epsilon)


@dataclass
class SgclTerms:
    L1: Tensor
    L2: Tensor
    L3: Tensor
    L_sgcl: Tensor

    def values(self) -> dict[str, float]:
        return {k: getattr(self, k).item() for k in ("L1", "L2", "L3", "L_sgcl")}


def sgcl_terms(y_img, y_fg, y_bg, projections: SgclProjections,
               anchor_reading: str = "equations") -> SgclTerms:
    """All three distances and their ratio from per-source feature lists (index 0..3)."""
    anchors = {"equations": EQUATION_ANCHORS, "prose": PROSE_ANCHORS}.get(anchor_reading)
    if anchors is None:
        raise ConfigError(f"anchor_reading must be 'equations' or 'prose', got {anchor_reading!r}")
    l1 = loss_semantic(y_fg, y_bg, projections.map("W1"))
    l2 = loss_consistency(y_img, projections.map("W2"), anchors)
    l3 = loss_diversity(y_img, projections.map("W3"), anchors)
    return SgclTerms(l1, l2, l3, sgcl_loss(l1, l2, l3, projections.epsilon))


def ensemble_sgcl(ens, projections: SgclProjections, anchor_reading: str = "equations") -> SgclTerms:
    """Convenience wrapper over an ``EnsembleOutputs``."""
    idx = range(FUSION + 1)
    return sgcl_terms([ens.Y(e, "img") for e in idx], [ens.Y(e, "fg") for e in idx],
                      [ens.Y(e, "bg") for e in idx], projections, anchor_reading)


def total_loss(ce, dice, sgcl, w_ce: float = 0.5, w_dice: float = 0.5, w_sgcl: float = 0.1):
    """``w_ce * ce + w_dice * dice + w_sgcl * sgcl``; weights must be non-negative."""
    for name, w in (("w_ce", w_ce), ("w_dice", w_dice), ("w_sgcl", w_sgcl)):
        if w < 0:
            raise ConfigError(f"{name} must be non-negative, got {w}")
    return w_ce * ce + w_dice * dice + w_sgcl * sgcl
