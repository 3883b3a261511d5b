# %% [markdown]
# # Pretrain, fine-tune, evaluate
# A shrunken version of the default benchmark so it runs in seconds. The full
# benchmark is `icmoe.trainer.run_pipeline` (about 3 minutes per seed).

# %%
from icmoe.data import SceneSpec, from_arrays, generate_arrays
from icmoe.experts import EncoderConfig, build_experts
from icmoe.losses import pca_distribution
from icmoe.trainer import TrainConfig, evaluate, finetune, pretrain

enc = EncoderConfig(image_size=32, patch_size=4, embed_dim=16, num_blocks=2, adapter_dim=4)
cfg = TrainConfig(epochs=30, pretrain_epochs=15, encoder=enc, lr_schedule=((30, 3e-5),))
source = from_arrays(*generate_arrays(SceneSpec(image_size=32, num_samples=48, domain="source")), "source")
target = from_arrays(*generate_arrays(SceneSpec(image_size=32, num_samples=96, domain="target")))

pre = pretrain(cfg, source)
print("pretrain loss", [round(v, 3) for v in pre.losses[::5]])

val = target.subset("val")
frozen = evaluate(build_experts(enc, pre.weights), val, cfg, "adaptive_only")
print(f"frozen encoder on target: DSC {frozen.summary['DSC']:.3f}")

# %% [markdown]
# At this size the three modes land within a few points of each other; the
# acceptance ablation runs on the full benchmark over three seeds.

# %%
for mode in ("adaptive_only", "ecfm", "ecfm+sgcl"):
    res = finetune(cfg, pre.weights, target, mode, validate_every=0)
    ev = evaluate(res.experts, val, cfg, mode, keep_features=True)
    print(f"{mode:<14} DSC {ev.summary['DSC']:.3f}  IoU {ev.summary['IoU']:.3f}")

# %% [markdown]
# First-principal-component distribution of the adaptive expert's patch
# features, split into foreground and background pixels.

# %%
rep = pca_distribution(ev.features["adaptive"], ev.masks, patch_size=enc.patch_size)
for lo, hi, f, b in rep.rows():
    print(f"[{lo:.2f}, {hi:.2f})  fg {'#' * (f // 20):<30} bg {'#' * (b // 80)}")
