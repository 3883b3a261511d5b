"""Acceptance gate.

Every criterion records a PASS/FAIL line (printed in the terminal summary)
before asserting, so a failing criterion still reports what it measured.
The trained-model criteria share the seed-0 pipeline run; a second seed-0
run in a fresh directory checks determinism.
"""

import csv
import itertools
import math
import time

import numpy as np
import pytest

from icmoe.checks import GRAD_TOLERANCE, gradient_suite
from icmoe.experts import load_checkpoint, load_experts
from icmoe.losses import confusion, metrics, read_per_sample_metrics
from icmoe.ppav import PredictionSet, SelectionState, ppav_batch, pseudo_gt
from icmoe.sgcl import SgclProjections, sgcl_terms
from icmoe.tensor import Tensor
from icmoe.trainer import MODES, run_pipeline

pytestmark = pytest.mark.acceptance

SEEDS = (0, 1, 2)


def majority(a, b, c):
    out = np.zeros(a.shape, dtype=np.uint8)
    for idx in np.ndindex(a.shape):
        out[idx] = int(int(a[idx]) + int(b[idx]) + int(c[idx]) >= 2)
    return out


# shared pipeline runs --------------------------------------------------------------------

class Runs:
    def __init__(self, root):
        self.root = root
        self.results = {}
        self.seconds = {}

    def get(self, seed):
        if seed not in self.results:
            t0 = time.perf_counter()
            self.results[seed] = run_pipeline(self.root / f"seed{seed}", seed=seed)
            self.seconds[seed] = time.perf_counter() - t0
        return self.results[seed]


@pytest.fixture(scope="session")
def runs(tmp_path_factory):
    return Runs(tmp_path_factory.mktemp("pipelines"))


# 1 ---------------------------------------------------------------------------------------

def test_c1_pseudo_gt_oracle(verdict):
    t0 = time.perf_counter()
    bad = 0
    for bits in itertools.product((0, 1), repeat=9):
        a, b, c = (np.array(bits[k:k + 3], dtype=np.uint8) for k in (0, 3, 6))
        bad += not np.array_equal(pseudo_gt(a, b, c), majority(a, b, c))
    rng = np.random.default_rng(0)
    for _ in range(1000):
        a, b, c = rng.integers(0, 2, size=(3, 8, 8))
        bad += not np.array_equal(pseudo_gt(a, b, c), majority(a, b, c))
    secs = time.perf_counter() - t0
    ok = bad == 0 and secs < 1.0
    assert verdict("1 pseudo-GT oracle", ok, f"{bad} mismatches over 512 + 1000 cases in {secs:.3f}s (< 1s)")


# 2 ---------------------------------------------------------------------------------------

def test_c2_balance_bound(verdict):
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    worst_excess, bad_sum = -10, 0
    for _ in range(500):
        b = int(rng.integers(6, 33))
        thr = math.ceil(b / 3)
        gt = rng.integers(0, 2, size=(b, 8, 8))
        preds = PredictionSet({e: rng.normal(size=(b, 8, 8)) for e in range(4)}, GT=gt)
        res = ppav_batch(preds, SelectionState(), "training")
        worst_excess = max(worst_excess, max(res.counts.values()) - (thr + 1))
        bad_sum += sum(res.counts.values()) != b
    secs = time.perf_counter() - t0
    ok = worst_excess <= 0 and bad_sum == 0 and secs < 5.0
    assert verdict("2 balance bound", ok,
                   f"max(count - (thr+1)) = {worst_excess}, {bad_sum} bad sums, {secs:.2f}s (< 5s)")


# 3 ---------------------------------------------------------------------------------------

def test_c3_fusion_identity(verdict):
    rng = np.random.default_rng(0)
    bad = 0
    for _ in range(100):
        b = int(rng.integers(1, 17))
        p = {e: rng.normal(scale=3, size=(b, 8, 8)) for e in range(4)}
        res = ppav_batch(PredictionSet(p), SelectionState(fusion_alpha=0.0), "inference")
        bad += res.fused.tobytes() != p[2].tobytes()
    assert verdict("3 fusion identity", bad == 0, f"{bad}/100 batches differ bitwise from P2 at alpha=0")


# 4 ---------------------------------------------------------------------------------------

def test_c4_gradient_suite(verdict):
    t0 = time.perf_counter()
    worst = gradient_suite(100, seed=0)
    secs = time.perf_counter() - t0
    ok = all(v < GRAD_TOLERANCE for v in worst.values()) and secs < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    assert verdict("4 gradient suite", ok, f"{detail}; {secs:.1f}s (< 60s)")


# 5 ---------------------------------------------------------------------------------------

def test_c5_sgcl_contracts(verdict):
    rng = np.random.default_rng(0)
    negative = nonzero_same = 0
    worst_scale = 0.0
    d = 6
    for trial in range(10_000):
        proj = SgclProjections(d, seed=trial, zero_bias=True)
        shape = (1, int(rng.integers(1, 4)), d)
        img, fg, bg = ([rng.normal(size=shape) for _ in range(4)] for _ in range(3))
        t = sgcl_terms([Tensor(a) for a in img], [Tensor(a) for a in fg], [Tensor(a) for a in bg], proj)
        negative += min(t.values().values()) < 0
        c = float(np.exp(rng.uniform(np.log(1e-3), np.log(1e3))))
        s = sgcl_terms([Tensor(c * a) for a in img], [Tensor(c * a) for a in fg],
                       [Tensor(c * a) for a in bg], proj)
        for k in ("L1", "L2", "L3"):
            worst_scale = max(worst_scale, abs(getattr(s, k).item() - getattr(t, k).item()))
        same = [Tensor(img[0])] * 4
        nonzero_same += sgcl_terms(same, same, same, proj).L_sgcl.item() != 0.0
    ok = negative == 0 and nonzero_same == 0 and worst_scale <= 1e-12
    assert verdict("5 SgCL contracts", ok,
                   f"{negative} negative, {nonzero_same} nonzero on coincident features, "
                   f"max scale drift {worst_scale:.1e} over 10000 trials")


# 6 ---------------------------------------------------------------------------------------

def test_c6_freeze_integrity(runs, verdict):
    res = runs.get(0)
    _, groups, _ = load_checkpoint(res.pretrained)
    ref = groups["pretrained"]
    changed, checked = [], 0
    for mode in MODES:
        experts, _ = load_experts(res.runs[mode] / "checkpoint")
        for e in experts:
            for n in e.frozen_names():
                checked += 1
                if e.params[n].data.tobytes() != ref[n].tobytes():
                    changed.append(f"{mode}:{e.kind}.{n}")
    ok = not changed and checked > 0
    assert verdict("6 freeze integrity", ok,
                   f"{checked} frozen tensors after 100 epochs, {len(changed)} changed {changed[:3]}")


# 7 ---------------------------------------------------------------------------------------

def _artifacts(root):
    keep = lambda p: p.suffix in (".icmt", ".csv") or p.name == "manifest.txt"
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and keep(p)}


def test_c7_determinism(runs, tmp_path_factory, verdict):
    first = runs.get(0)
    second = run_pipeline(tmp_path_factory.mktemp("again"), seed=0)
    a, b = _artifacts(first.root), _artifacts(second.root)
    differ = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    n_ckpt = sum(k.endswith(".icmt") and "checkpoint" in k for k in a)
    ok = not differ and n_ckpt > 0
    assert verdict("7 determinism", ok,
                   f"{len(a)} checkpoint/CSV files compared ({n_ckpt} checkpoint tensors), "
                   f"{len(differ)} differ {differ[:3]}")


# 8 ---------------------------------------------------------------------------------------

def test_c8_directional_ablation(runs, verdict):
    for seed in SEEDS:
        runs.get(seed)
    secs = sum(runs.seconds[s] for s in SEEDS)
    dsc = {m: 100 * np.mean([runs.results[s].summaries[m]["DSC"] for s in SEEDS]) for m in MODES}
    m1 = dsc["ecfm"] - dsc["adaptive_only"]
    m2 = dsc["ecfm+sgcl"] - dsc["ecfm"]
    ok = m1 >= -0.5 and m2 >= -0.5 and secs <= 30 * 60
    per_seed = "; ".join(f"seed {s}: " + "/".join(f"{100 * runs.results[s].summaries[m]['DSC']:.2f}"
                                                   for m in MODES) for s in SEEDS)
    assert verdict("8 directional ablation", ok,
                   f"mean DSC adaptive_only {dsc['adaptive_only']:.2f}, ecfm {dsc['ecfm']:.2f}, "
                   f"ecfm+sgcl {dsc['ecfm+sgcl']:.2f}; margins {m1:+.2f}, {m2:+.2f} (>= -0.5); "
                   f"{secs / 60:.1f} min (<= 30) [{per_seed}]")


# 9 ---------------------------------------------------------------------------------------

def test_c9_metric_identities(runs, verdict):
    res = runs.get(0)
    worst, n = 0.0, 0
    files = [res.root / "baseline_eval" / "per_sample_metrics.csv"]
    files += [res.runs[m] / "eval" / f for m in MODES
              for f in ("per_sample_metrics.csv", "per_sample_metrics_adaptive.csv")]
    for f in files:
        for _, m in read_per_sample_metrics(f):
            worst = max(worst, abs(m["DSC"] - 2 * m["IoU"] / (1 + m["IoU"])))
            n += 1
    pred = np.array([1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]).reshape(4, 4)
    gt = np.array([1, 1, 1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0]).reshape(4, 4)
    c, hand = confusion(pred, gt), metrics(pred, gt)
    exact = ((c.TP, c.FP, c.FN, c.TN) == (4, 2, 2, 8) and hand["DSC"] == 8 / 12
             and hand["IoU"] == 4 / 8 and hand["accuracy"] == 12 / 16
             and hand["recall"] == 4 / 6 and hand["precision"] == 4 / 6)
    ok = n > 0 and worst <= 1e-12 and exact
    assert verdict("9 metric identities", ok,
                   f"max |DSC - 2IoU/(1+IoU)| = {worst:.1e} over {n} samples; hand 4x4 case "
                   f"{'exact' if exact else 'WRONG'} (DSC 2/3, IoU 1/2)")


# 10 --------------------------------------------------------------------------------------

def test_c10_transfer_gap(runs, verdict):
    res = runs.get(0)
    base, tuned = 100 * res.baseline["DSC"], 100 * res.summaries["adaptive_only"]["DSC"]
    ok = tuned - base >= 10.0
    assert verdict("10 transfer gap", ok,
                   f"frozen {base:.2f} -> adaptive_only {tuned:.2f} DSC ({tuned - base:+.2f}, need >= +10)")


# spec invariant ---------------------------------------------------------------------------

def test_loss_trend_invariant(runs, verdict):
    res = runs.get(0)
    worst = {}
    for mode in MODES:
        with open(res.runs[mode] / "losses.csv") as fh:
            total = np.array([float(r["total"]) for r in csv.DictReader(fh)])
        ma = np.convolve(total, np.ones(10) / 10, mode="valid")
        worst[mode] = float(np.max(np.diff(ma)))
    ok = all(v <= 0 for v in worst.values())
    assert verdict("invariant: 10-epoch moving-average loss non-increasing", ok,
                   ", ".join(f"{m} max rise {v:+.2e}" for m, v in worst.items()))
