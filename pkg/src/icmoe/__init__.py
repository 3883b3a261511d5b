"""Expert-ensemble segmentation with adaptive voting and contrastive feature guidance, on numpy."""

from .data import SceneSpec, generate, load_manifest
from .experts import EncoderConfig, build_experts, forward_ensemble
from .ppav import ppav_batch
from .sgcl import SgclProjections, sgcl_terms
from .trainer import TrainConfig, evaluate, finetune, pretrain, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "EncoderConfig", "SceneSpec", "SgclProjections", "TrainConfig", "build_experts", "evaluate",
    "finetune", "forward_ensemble", "generate", "load_manifest", "ppav_batch", "pretrain",
    "run_pipeline", "sgcl_terms",
]
