"""Synthetic two-domain segmentation scenes and the fg/bg input split.

Each scene is a single-channel image with one ellipse or blob lesion that is
``intensity_gap`` brighter than a flat, optionally textured background. The
target domain squeezes contrast, lifts the background and adds more noise so
a model trained on the source domain transfers imperfectly.

Every sample draws from its own ``SeedSequence([seed, domain, index])``
stream, so the dataset is a pure function of the spec and can be generated in
any order.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError
from .tensor import load_icmt, save_icmt

DOMAINS = {"source": 0, "target": 1}
SHAPES = ("ellipse", "blob")

# target-domain transform applied to the clean image before noise
TARGET_CONTRAST = 0.6
TARGET_OFFSET = 0.25
TARGET_NOISE_FACTOR = 1.5

BACKGROUND_RANGE = (0.05, 0.35)
TEXTURE_AMPLITUDE = 0.04


@dataclass(frozen=True)
class SceneSpec:
    image_size: int = 64
    num_samples: int = 100
    domain: str = "source"
    seed: int = 0
    fg_shape: str = "ellipse"
    intensity_gap: float = 0.4
    noise_sigma: float = 0.05
    texture_frequency: float = 2.0
    area_range: tuple[float, float] = (0.05, 0.3)

    def __post_init__(self):
        if self.image_size < 8:
            raise ConfigError(f"image_size must be at least 8, got {self.image_size}")
        if self.num_samples < 1:
            raise ConfigError("num_samples must be positive")
        if self.domain not in DOMAINS:
            raise ConfigError(f"domain must be one of {sorted(DOMAINS)}, got {self.domain!r}")
        if self.fg_shape not in SHAPES:
            raise ConfigError(f"fg_shape must be one of {SHAPES}, got {self.fg_shape!r}")
        if self.intensity_gap <= 0:
            raise ConfigError("intensity_gap must be positive")
        if self.noise_sigma < 0 or self.texture_frequency < 0:
            raise ConfigError("noise_sigma and texture_frequency must be non-negative")
        lo, hi = self.area_range
        if not 0 < lo < hi < 0.5:
            raise ConfigError(f"area_range {self.area_range} must satisfy 0 < lo < hi < 0.5")
        if BACKGROUND_RANGE[1] + TEXTURE_AMPLITUDE + self.intensity_gap > 1.0:
            raise ConfigError("intensity_gap too large: foreground would saturate at 1")

    @classmethod
    def from_entries(cls, entries: dict[str, str]) -> SceneSpec:
        kw = {}
        for k, v in entries.items():
            if k not in cls.__dataclass_fields__:
                raise ConfigError(f"unknown scene field {k!r}")
            if k in ("image_size", "num_samples", "seed"):
                kw[k] = int(v)
            elif k in ("intensity_gap", "noise_sigma", "texture_frequency"):
                kw[k] = float(v)
            elif k == "area_range":
                lo, hi = v.split(",")
                kw[k] = (float(lo), float(hi))
            else:
                kw[k] = v
        return cls(**kw)

    def entries(self) -> dict[str, str]:
        d = asdict(self)
        d["area_range"] = f"{self.area_range[0]!r},{self.area_range[1]!r}"
        return {k: str(v) for k, v in d.items()}


def _sample_rng(spec: SceneSpec, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([spec.seed, DOMAINS[spec.domain], index]))


def _shape_mask(rng: np.random.Generator, spec: SceneSpec) -> np.ndarray:
    n = spec.image_size
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64) + 0.5
    lo, hi = spec.area_range
    while True:
        area = rng.uniform(lo, hi) * n * n
        aspect = rng.uniform(0.6, 1.6)
        ry = np.sqrt(area / (np.pi * aspect))
        rx = ry * aspect
        reach = max(rx, ry)
        cy, cx = rng.uniform(reach, n - reach, size=2) if reach < n / 2 else (n / 2, n / 2)
        theta = rng.uniform(0, np.pi)
        dy, dx = yy - cy, xx - cx
        u = dx * np.cos(theta) + dy * np.sin(theta)
        v = -dx * np.sin(theta) + dy * np.cos(theta)
        r = np.sqrt((u / rx) ** 2 + (v / ry) ** 2)
        if spec.fg_shape == "blob":
            ang = np.arctan2(v, u)
            k = rng.integers(2, 5)
            wobble = 1.0 + 0.2 * np.sin(k * ang + rng.uniform(0, 2 * np.pi))
            mask = r <= wobble
        else:
            mask = r <= 1.0
        frac = mask.mean()
        if lo <= frac <= hi:
            return mask.astype(np.float64)


def render_sample(spec: SceneSpec, index: int) -> tuple[np.ndarray, np.ndarray]:
    """Image (values in [0, 1]) and binary mask for sample ``index``."""
    rng = _sample_rng(spec, index)
    n = spec.image_size
    mask = _shape_mask(rng, spec)
    clean = np.full((n, n), rng.uniform(*BACKGROUND_RANGE))
    if spec.texture_frequency > 0:
        yy, xx = np.mgrid[0:n, 0:n] / n
        phi, phase = rng.uniform(0, 2 * np.pi, size=2)
        wave = np.sin(2 * np.pi * spec.texture_frequency * (xx * np.cos(phi) + yy * np.sin(phi)) + phase)
        clean = clean + TEXTURE_AMPLITUDE * wave
    clean = clean + spec.intensity_gap * mask
    sigma = spec.noise_sigma
    if spec.domain == "target":
        clean = TARGET_CONTRAST * clean + TARGET_OFFSET
        sigma *= TARGET_NOISE_FACTOR
    noise = rng.normal(0.0, sigma, size=(n, n)) if sigma > 0 else 0.0
    return np.clip(clean + noise, 0.0, 1.0), mask


def generate_arrays(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    pairs = [render_sample(spec, i) for i in range(spec.num_samples)]
    return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])


def split_input(x_img, gt) -> tuple[np.ndarray, np.ndarray]:
    """Foreground-only and background-only copies; they sum back to ``x_img`` exactly."""
    x, m = np.asarray(x_img, dtype=np.float64), np.asarray(gt)
    if x.shape != m.shape:
        raise ContractError(f"split_input: image {x.shape} vs mask {m.shape}")
    if not np.all((m == 0) | (m == 1)):
        raise ContractError("split_input: mask is not binary")
    on = m == 1
    return np.where(on, x, 0.0), np.where(on, 0.0, x)


# on-disk dataset ------------------------------------------------------------------------

MANIFEST_NAME = "manifest.csv"
SPEC_NAME = "spec.txt"


def generate(spec: SceneSpec, out_dir) -> Path:
    """Write ``images/NNNN.icmt``, ``masks/NNNN.icmt``, ``manifest.csv`` and ``spec.txt``."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(spec.num_samples):
        img, mask = render_sample(spec, i)
        ip, mp = f"images/{i:04d}.icmt", f"masks/{i:04d}.icmt"
        save_icmt(out / ip, img)
        save_icmt(out / mp, mask)
        rows.append((i, ip, mp, spec.domain))
    with open(out / MANIFEST_NAME, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("sample_id", "image_path", "mask_path", "domain"))
        w.writerows(rows)
    (out / SPEC_NAME).write_text("".join(f"{k}={v}\n" for k, v in spec.entries().items()))
    return out


@dataclass
class Dataset:
    ids: np.ndarray
    images: np.ndarray
    masks: np.ndarray
    domain: str
    train_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    val_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, which: str) -> Dataset:
        idx = {"train": self.train_idx, "val": self.val_idx, "all": np.arange(len(self))}[which]
        return Dataset(self.ids[idx], self.images[idx], self.masks[idx], self.domain,
                       np.arange(len(idx)), np.zeros(0, dtype=np.int64))


def split_indices(ids, seed: int = 0, train_fraction: float = 0.75):
    """Order samples by a seeded hash of their id and cut at ``train_fraction``."""
    keys = [hashlib.sha256(f"{seed}:{int(i)}".encode()).hexdigest() for i in ids]
    order = np.array(sorted(range(len(ids)), key=lambda k: keys[k]), dtype=np.int64)
    n_train = int(len(ids) * train_fraction)
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def load_manifest(path, split_seed: int = 0) -> Dataset:
    """Load a generated dataset (directory or manifest path) with a 3:1 train/val split."""
    path = Path(path)
    root = path.parent if path.is_file() or path.suffix == ".csv" else path
    manifest = root / MANIFEST_NAME if path == root else path
    if not manifest.exists():
        raise FileNotFoundError(f"missing dataset manifest: {manifest}")
    with open(manifest, newline="") as fh:
        rows = list(csv.DictReader(fh))
    ids, images, masks, domains = [], [], [], set()
    for r in rows:
        for key in ("image_path", "mask_path"):
            if not (root / r[key]).exists():
                raise FileNotFoundError(f"missing dataset file: {root / r[key]}")
        ids.append(int(r["sample_id"]))
        images.append(load_icmt(root / r["image_path"]))
        masks.append(load_icmt(root / r["mask_path"]))
        domains.add(r["domain"])
    ids_arr = np.array(ids, dtype=np.int64)
    train, val = split_indices(ids_arr, split_seed)
    domain = domains.pop() if len(domains) == 1 else "mixed"
    return Dataset(ids_arr, np.stack(images), np.stack(masks), domain, train, val)


def from_arrays(images, masks, domain: str = "target", split_seed: int = 0) -> Dataset:
    ids = np.arange(len(images), dtype=np.int64)
    train, val = split_indices(ids, split_seed)
    return Dataset(ids, np.asarray(images, dtype=np.float64), np.asarray(masks, dtype=np.float64),
                   domain, train, val)
