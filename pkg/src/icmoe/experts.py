"""Basic, semantic and adaptive experts over a shared patch-MLP encoder.

All three experts start as clones of the same pretrained encoder. They differ
only in which parameters may change:

* basic: nothing is trainable,
* semantic: the last two residual blocks and the head,
* adaptive: a residual bottleneck adapter after every block, and the head.

The adapter up-projection is zero-initialized so the adaptive expert starts out
numerically identical to the basic one.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import Tensor, linear, load_icmt, no_grad, relu, reshape, save_icmt, transpose

KINDS = ("basic", "semantic", "adaptive")
BASIC, SEMANTIC, ADAPTIVE, FUSION = 0, 1, 2, 3


@dataclass(frozen=True)
class EncoderConfig:
    image_size: int = 64
    patch_size: int = 8
    embed_dim: int = 32
    num_blocks: int = 4
    adapter_dim: int = 8

    def __post_init__(self):
        for name in ("image_size", "patch_size", "embed_dim", "num_blocks", "adapter_dim"):
            if int(getattr(self, name)) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.image_size % self.patch_size:
            raise ConfigError(f"image_size {self.image_size} is not divisible by "
                              f"patch_size {self.patch_size}")
        if self.num_blocks < 2:
            raise ConfigError("num_blocks must be at least 2")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid * self.grid

    @property
    def patch_pixels(self) -> int:
        return self.patch_size * self.patch_size


def encoder_shapes(config: EncoderConfig) -> dict[str, tuple[int, ...]]:
    """Parameter names and shapes of one encoder + head, without adapters."""
    d, pp = config.embed_dim, config.patch_pixels
    shapes = {"patch_embed.weight": (pp, d), "patch_embed.bias": (d,)}
    for i in range(config.num_blocks):
        shapes[f"blocks.{i}.fc1.weight"] = (d, d)
        shapes[f"blocks.{i}.fc1.bias"] = (d,)
        shapes[f"blocks.{i}.fc2.weight"] = (d, d)
        shapes[f"blocks.{i}.fc2.bias"] = (d,)
    shapes["head.weight"] = (d, pp)
    shapes["head.bias"] = (pp,)
    return shapes


def adapter_shapes(config: EncoderConfig) -> dict[str, tuple[int, ...]]:
    d, a = config.embed_dim, config.adapter_dim
    shapes = {}
    for i in range(config.num_blocks):
        shapes[f"adapters.{i}.down.weight"] = (d, a)
        shapes[f"adapters.{i}.down.bias"] = (a,)
        shapes[f"adapters.{i}.up.weight"] = (a, d)
        shapes[f"adapters.{i}.up.bias"] = (d,)
    return shapes


def init_encoder(config: EncoderConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """Fresh encoder weights: fan-in uniform init, zero biases, damped residual branch."""
    rng = np.random.default_rng(seed)
    weights = {}
    for name, shape in encoder_shapes(config).items():
        if name.endswith("bias"):
            weights[name] = np.zeros(shape)
            continue
        bound = np.sqrt(1.0 / shape[0])
        if ".fc2." in name:
            bound *= 0.5
        weights[name] = rng.uniform(-bound, bound, size=shape)
    return weights


@dataclass
class ExpertParams:
    kind: str
    config: EncoderConfig
    params: dict[str, Tensor]
    trainable: dict[str, bool]

    @property
    def has_adapters(self) -> bool:
        return self.kind == "adaptive"

    def trainable_names(self) -> list[str]:
        return [n for n, t in self.trainable.items() if t]

    def frozen_names(self) -> list[str]:
        return [n for n, t in self.trainable.items() if not t]

    def num_params(self, names=None) -> int:
        names = self.params if names is None else names
        return int(sum(self.params[n].size for n in names))

    def state(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.params.items()}


def _trainable_mask(kind: str, names, config: EncoderConfig) -> dict[str, bool]:
    last_two = {f"blocks.{config.num_blocks - 2}.", f"blocks.{config.num_blocks - 1}."}
    mask = {}
    for n in names:
        if kind == "basic":
            mask[n] = False
        elif kind == "semantic":
            mask[n] = n.startswith("head.") or any(n.startswith(p) for p in last_two)
        else:
            mask[n] = n.startswith("head.") or n.startswith("adapters.")
    return mask


def make_expert(kind: str, config: EncoderConfig, pretrained, adapter_seed: int = 0) -> ExpertParams:
    if kind not in KINDS:
        raise ConfigError(f"unknown expert kind {kind!r}")
    shapes = encoder_shapes(config)
    for name, shape in shapes.items():
        if name not in pretrained:
            raise ConfigError(f"pretrained weights lack {name}")
        if tuple(np.shape(pretrained[name])) != shape:
            raise ConfigError(f"pretrained {name} has shape {np.shape(pretrained[name])}, "
                              f"config expects {shape}")
    arrays = {n: np.array(pretrained[n], dtype=np.float64) for n in shapes}
    if kind == "adaptive":
        rng = np.random.default_rng(adapter_seed)
        for name, shape in adapter_shapes(config).items():
            if name.endswith("down.weight"):
                bound = np.sqrt(1.0 / shape[0])
                arrays[name] = rng.uniform(-bound, bound, size=shape)
            else:
                arrays[name] = np.zeros(shape)
    mask = _trainable_mask(kind, arrays, config)
    params = {n: Tensor(a, requires_grad=mask[n]) for n, a in arrays.items()}
    return ExpertParams(kind, config, params, mask)


def build_experts(config: EncoderConfig, pretrained, adapter_seed: int = 0) -> list[ExpertParams]:
    """Clone ``pretrained`` into the basic, semantic and adaptive experts (in that order)."""
    return [make_expert(kind, config, pretrained, adapter_seed) for kind in KINDS]


# forward ----------------------------------------------------------------------

def patchify(images: np.ndarray, patch_size: int) -> np.ndarray:
    """B x H x W images -> B x N x patch_size**2, patches in row-major grid order."""
    b, h, w = images.shape
    g = h // patch_size
    x = images.reshape(b, g, patch_size, w // patch_size, patch_size)
    return x.transpose(0, 1, 3, 2, 4).reshape(b, g * (w // patch_size), patch_size * patch_size)


def unpatchify(patches: Tensor, patch_size: int, image_size: int) -> Tensor:
    b = patches.shape[0]
    g = image_size // patch_size
    x = reshape(patches, (b, g, g, patch_size, patch_size))
    x = transpose(x, (0, 1, 3, 2, 4))
    return reshape(x, (b, image_size, image_size))


def encode(expert: ExpertParams, patches) -> Tensor:
    p = expert.params
    h = linear(patches, p["patch_embed.weight"], p["patch_embed.bias"])
    for i in range(expert.config.num_blocks):
        z = relu(linear(h, p[f"blocks.{i}.fc1.weight"], p[f"blocks.{i}.fc1.bias"]))
        h = h + linear(z, p[f"blocks.{i}.fc2.weight"], p[f"blocks.{i}.fc2.bias"])
        if expert.has_adapters:
            a = relu(linear(h, p[f"adapters.{i}.down.weight"], p[f"adapters.{i}.down.bias"]))
            h = h + linear(a, p[f"adapters.{i}.up.weight"], p[f"adapters.{i}.up.bias"])
    return h


def decode(expert: ExpertParams, features: Tensor) -> Tensor:
    cfg = expert.config
    logits = linear(features, expert.params["head.weight"], expert.params["head.bias"])
    return unpatchify(logits, cfg.patch_size, cfg.image_size)


@dataclass
class ExpertOutputs:
    Y_img: Tensor
    P: Tensor
    Y_fg: Tensor | None = None
    Y_bg: Tensor | None = None


def _check_images(x, config: EncoderConfig, what: str) -> np.ndarray:
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (config.image_size, config.image_size):
        raise DimensionError(f"{what}: expected B x {config.image_size} x {config.image_size}, "
                             f"got {x.shape}")
    return x


def forward_expert(expert: ExpertParams, x_img, x_fg=None, x_bg=None) -> ExpertOutputs:
    """Features and logits for one expert.

    The foreground/background passes run with recording disabled, so their
    features enter any later graph as constants.
    """
    cfg = expert.config
    x_img = _check_images(x_img, cfg, "x_img")
    y_img = encode(expert, patchify(x_img, cfg.patch_size))
    out = ExpertOutputs(Y_img=y_img, P=decode(expert, y_img))
    with no_grad():
        if x_fg is not None:
            out.Y_fg = encode(expert, patchify(_check_images(x_fg, cfg, "x_fg"), cfg.patch_size))
        if x_bg is not None:
            out.Y_bg = encode(expert, patchify(_check_images(x_bg, cfg, "x_bg"), cfg.patch_size))
    return out


def _mean3(a, b, c):
    if a is None or b is None or c is None:
        return None
    return (a + b + c) / 3.0


@dataclass
class EnsembleOutputs:
    experts: list[ExpertOutputs]
    Y3_img: Tensor
    P3: Tensor
    Y3_fg: Tensor | None = None
    Y3_bg: Tensor | None = None

    def P(self, e: int) -> Tensor:
        return self.P3 if e == FUSION else self.experts[e].P

    def Y(self, e: int, part: str = "img") -> Tensor | None:
        if e == FUSION:
            return {"img": self.Y3_img, "fg": self.Y3_fg, "bg": self.Y3_bg}[part]
        return getattr(self.experts[e], f"Y_{part}")


def forward_ensemble(experts, x_img, x_fg=None, x_bg=None) -> EnsembleOutputs:
    """Run the three experts and average their features and logits."""
    outs = [forward_expert(e, x_img, x_fg, x_bg) for e in experts]
    return EnsembleOutputs(
        experts=outs,
        Y3_img=_mean3(*(o.Y_img for o in outs)),
        P3=_mean3(*(o.P for o in outs)),
        Y3_fg=_mean3(*(o.Y_fg for o in outs)),
        Y3_bg=_mean3(*(o.Y_bg for o in outs)),
    )


def count_complexity(experts) -> dict[str, int]:
    """Exact parameter counts and multiply-accumulates per image for the image pass."""
    total = sum(e.num_params() for e in experts)
    trainable = sum(e.num_params(e.trainable_names()) for e in experts)
    macs = 0
    for e in experts:
        n = e.config.num_patches
        for name, p in e.params.items():
            if name.endswith(".weight"):
                macs += n * p.shape[0] * p.shape[1]
    return {"total_params": int(total), "trainable_params": int(trainable),
            "mult_accumulate_per_image": int(macs)}


# checkpoints --------------------------------------------------------------------

MANIFEST = "manifest.txt"


def _write_manifest(path: Path, entries: dict) -> None:
    lines = [f"{k}={v}" for k, v in entries.items()]
    (path / MANIFEST).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> dict[str, str]:
    """Parse a plain-text ``key=value`` file, ignoring blanks and ``#`` comments."""
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}: malformed line {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _config_entries(config: EncoderConfig) -> dict:
    return {k: getattr(config, k) for k in
            ("image_size", "patch_size", "embed_dim", "num_blocks", "adapter_dim")}


def config_from_manifest(entries: dict) -> EncoderConfig:
    try:
        return EncoderConfig(**{k: int(entries[k]) for k in
                                ("image_size", "patch_size", "embed_dim", "num_blocks",
                                 "adapter_dim")})
    except KeyError as exc:
        raise ConfigError(f"checkpoint manifest lacks {exc.args[0]}") from None


def save_checkpoint(path, config: EncoderConfig, groups: dict[str, dict], extra=None) -> Path:
    """Write each ``{group: {name: array}}`` as ``group.name.icmt`` plus a manifest."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = _config_entries(config)
    entries["groups"] = ",".join(groups)
    entries.update(extra or {})
    for group, arrays in groups.items():
        for name, arr in arrays.items():
            data = arr.data if isinstance(arr, Tensor) else arr
            save_icmt(path / f"{group}.{name}.icmt", data)
    _write_manifest(path, entries)
    return path


def load_checkpoint(path) -> tuple[EncoderConfig, dict[str, dict[str, np.ndarray]], dict]:
    path = Path(path)
    if not (path / MANIFEST).exists():
        raise FileNotFoundError(f"no checkpoint manifest at {path / MANIFEST}")
    entries = read_manifest(path / MANIFEST)
    config = config_from_manifest(entries)
    groups: dict[str, dict[str, np.ndarray]] = {g: {} for g in entries["groups"].split(",") if g}
    for f in sorted(path.glob("*.icmt")):
        group, name = f.name[:-len(".icmt")].split(".", 1)
        if group in groups:
            groups[group][name] = load_icmt(f)
    return config, groups, entries


def save_experts(path, experts, projections=None, extra=None) -> Path:
    groups = {e.kind: e.params for e in experts}
    if projections is not None:
        groups["sgcl"] = projections.params
    info = {"kinds": ",".join(e.kind for e in experts)}
    info.update(extra or {})
    return save_checkpoint(path, experts[0].config, groups, info)


def load_experts(path) -> tuple[list[ExpertParams], dict[str, np.ndarray] | None]:
    config, groups, _ = load_checkpoint(path)
    experts = []
    for kind in KINDS:
        if kind not in groups:
            raise ConfigError(f"checkpoint {path} lacks the {kind} expert")
        arrays = groups[kind]
        e = make_expert(kind, config, arrays)
        for name, t in e.params.items():
            t.data = np.array(arrays[name])
        experts.append(e)
    return experts, groups.get("sgcl")
