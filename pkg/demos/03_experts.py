# %% [markdown]
# # Three experts, three freezing schemes
# All three start from the same pretrained encoder. The basic expert is fully
# frozen, the semantic expert trains its last two blocks and head, and the
# adaptive expert trains bottleneck adapters plus the head.

# %%
import numpy as np

from icmoe.experts import EncoderConfig, build_experts, count_complexity, forward_ensemble, init_encoder

cfg = EncoderConfig()
experts = build_experts(cfg, init_encoder(cfg, seed=0))
for e in experts:
    print(f"{e.kind:<9} params {e.num_params():>6}  trainable {e.num_params(e.trainable_names()):>6}")
print(count_complexity(experts))

# %% [markdown]
# The ensemble forward also produces the fusion source: the mean of the three
# experts' logits and features.

# %%
x = np.random.default_rng(0).uniform(size=(2, 64, 64))
ens = forward_ensemble(experts, x)
print("P3 shape", ens.P3.shape, "Y3 shape", ens.Y3_img.shape)
# adapters start as an exact identity, so the adaptive expert matches the basic one
print("adaptive == basic at init:", np.array_equal(ens.P(0).data, ens.P(2).data))
