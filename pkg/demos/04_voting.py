# %% [markdown]
# # Pixel probability voting with load balancing
# Each sample picks one candidate (basic, semantic or fused) by mask agreement
# with the ground truth (training) or the majority-vote pseudo ground truth
# (inference). A per-batch cap stops one candidate from taking every sample.

# %%
import numpy as np

from icmoe.checks import ppav_simulation
from icmoe.ppav import PredictionSet, SelectionState, binarize, ppav_batch, pseudo_gt

res = ppav_simulation(batch=12, threshold=4, seed=0)
for r in res.log:
    print(r.sample_id, [f"{s:.3f}" for s in r.scores], "->", r.chosen, "count", r.count_after)
print("counts", res.counts)

# %% [markdown]
# Inference uses the pseudo ground truth built from the three candidate masks.

# %%
rng = np.random.default_rng(1)
p = {e: rng.normal(size=(3, 8, 8)) for e in range(4)}
preds = PredictionSet(p)
out = ppav_batch(preds, SelectionState(fusion_alpha=0.5), "inference")
majority = pseudo_gt(*(binarize(p[e]) for e in (0, 1, 3)))
print("pseudo-GT matches majority:", np.array_equal(preds.PGT, majority))
print("chosen", out.chosen)
