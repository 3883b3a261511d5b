"""Self-checks shared by the command line and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import ce_loss, dice_loss
from .ppav import PPAVResult, PredictionSet, SelectionState, ppav_batch
from .sgcl import EQUATION_ANCHORS, SgclProjections, sgcl_terms, total_loss
from .tensor import Tensor, grad_check

GRAD_TOLERANCE = 1e-6
GRAD_TERMS = ("ce_loss", "dice_loss", "L1", "L2", "L3", "L_sgcl", "total_loss")
# |u_c - v_c| below this is treated as too close to the kink of |.| for differencing
KINK_GAP = 1e-4


@dataclass
class GradInstance:
    logits: np.ndarray
    target: np.ndarray
    img: list[np.ndarray]
    fg: list[np.ndarray]
    bg: list[np.ndarray]
    proj: SgclProjections


def _unit_rows(y, w, b):
    p = y @ w + b
    return p / np.maximum(np.linalg.norm(p, axis=-1, keepdims=True), 1e-12)


def _min_gap(inst: GradInstance) -> float:
    """Smallest |difference| between compared projected components over all three terms."""
    pr = {k: (inst.proj.params[f"{k}.weight"].data, inst.proj.params[f"{k}.bias"].data)
          for k in ("W1", "W2", "W3")}
    pairs = [(inst.fg[i], inst.bg[i], "W1") for i in range(4)]
    for term, key in (("L2", "W2"), ("L3", "W3")):
        sources, anchor = EQUATION_ANCHORS[term]
        pairs += [(inst.img[j], inst.img[anchor], key) for j in sources]
    return min(float(np.abs(_unit_rows(a, *pr[k]) - _unit_rows(b, *pr[k])).min()) for a, b, k in pairs)


def random_instance(rng: np.random.Generator, embed_dim: int = 6, patches: int = 3) -> GradInstance:
    """A random loss instance whose absolute differences all sit away from zero."""
    while True:
        shape = (1, patches, embed_dim)
        inst = GradInstance(
            logits=rng.normal(scale=2.0, size=(2, 4, 4)),
            target=rng.integers(0, 2, size=(2, 4, 4)).astype(np.float64),
            img=[rng.normal(size=shape) for _ in range(4)],
            fg=[rng.normal(size=shape) for _ in range(4)],
            bg=[rng.normal(size=shape) for _ in range(4)],
            proj=SgclProjections(embed_dim, seed=int(rng.integers(1 << 31)), zero_bias=False),
        )
        if _min_gap(inst) > KINK_GAP:
            return inst


def _check_weight(inst: GradInstance, key: str, term: str) -> float:
    proj = inst.proj
    name = f"{key}.weight"
    w0 = proj.params[name]

    def f(w):
        proj.params[name] = w
        return getattr(sgcl_terms(_t(inst.img), _t(inst.fg), _t(inst.bg), proj), term)

    try:
        return grad_check(f, w0.data.copy())
    finally:
        proj.params[name] = w0


def _check_feature(inst: GradInstance, source: int, term: str) -> float:
    def f(y):
        img = _t(inst.img)
        img[source] = y
        return getattr(sgcl_terms(img, _t(inst.fg), _t(inst.bg), inst.proj), term)

    return grad_check(f, inst.img[source])


def _t(arrays):
    return [Tensor(a) for a in arrays]


def instance_errors(inst: GradInstance, w=(0.5, 0.5, 0.1)) -> dict[str, float]:
    """Max relative finite-difference error of every loss term on one instance."""
    y = inst.target
    with_sgcl = sgcl_terms(_t(inst.img), _t(inst.fg), _t(inst.bg), inst.proj).L_sgcl.item()
    err = {
        "ce_loss": grad_check(lambda z: ce_loss(z, y), inst.logits),
        "dice_loss": grad_check(lambda z: dice_loss(z, y), inst.logits),
        "L1": _check_weight(inst, "W1", "L1"),
        "L2": max(_check_weight(inst, "W2", "L2"), _check_feature(inst, 2, "L2")),
        "L3": max(_check_weight(inst, "W3", "L3"), _check_feature(inst, 0, "L3")),
        "L_sgcl": max(_check_weight(inst, k, "L_sgcl") for k in ("W1", "W2", "W3")),
    }
    err["L_sgcl"] = max(err["L_sgcl"], _check_feature(inst, 1, "L_sgcl"))

    def total_wrt_logits(z):
        return total_loss(ce_loss(z, y), dice_loss(z, y), with_sgcl, *w)

    def total_wrt_feature(f1):
        img = _t(inst.img)
        img[1] = f1
        l_s = sgcl_terms(img, _t(inst.fg), _t(inst.bg), inst.proj).L_sgcl
        return total_loss(ce_loss(inst.logits, y), dice_loss(inst.logits, y), l_s, *w)

    err["total_loss"] = max(grad_check(total_wrt_logits, inst.logits),
                            grad_check(total_wrt_feature, inst.img[1]))
    return err


def gradient_suite(instances: int = 100, seed: int = 0) -> dict[str, float]:
    """Worst relative error per loss term over ``instances`` random instances."""
    rng = np.random.default_rng(seed)
    worst = dict.fromkeys(GRAD_TERMS, 0.0)
    for _ in range(instances):
        for k, v in instance_errors(random_instance(rng)).items():
            worst[k] = max(worst[k], v)
    return worst


def ppav_simulation(batch: int, threshold: int | None = None, seed: int = 0,
                    size: int = 8) -> PPAVResult:
    """Training-mode voting on random logits and a random ground truth."""
    rng = np.random.default_rng(seed)
    gt = rng.integers(0, 2, size=(batch, size, size))
    preds = PredictionSet({e: rng.normal(size=(batch, size, size)) for e in range(4)}, GT=gt)
    return ppav_batch(preds, SelectionState(n_threshold=threshold), "training")
