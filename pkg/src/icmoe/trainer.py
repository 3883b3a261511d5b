"""Deterministic two-stage training.

Stage one pretrains a single encoder + head on the source domain; its weights
play the role of the frozen prior. Stage two clones it into the expert trio
and fine-tunes on the target domain in one of three modes:

* ``adaptive_only``: only the adaptive expert runs and trains; output is its logits,
* ``ecfm``: all three experts, voting and fusion, no contrastive term,
* ``ecfm+sgcl``: as ``ecfm`` plus the semantic-guided contrastive loss.

Every random draw comes from a generator seeded by ``(seed, purpose, ...)``
so a run is a pure function of its config and data.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .data import Dataset, SceneSpec, generate, load_manifest, split_input
from .errors import ConfigError, InvariantError, TrainingError
from .experts import (EncoderConfig, ExpertParams, build_experts, forward_ensemble, forward_expert,
                      init_encoder, load_checkpoint, load_experts, read_manifest, save_checkpoint,
                      save_experts)
from .losses import (METRIC_NAMES, ce_loss, dice_loss, metrics, pca_distribution, seg_loss,
                     write_per_sample_metrics)
from .ppav import PredictionSet, SelectionState, binarize, ppav_batch, write_selection_log
from .sgcl import SgclProjections, ensemble_sgcl, total_loss
from .tensor import Tensor, backward, no_grad

log = logging.getLogger(__name__)

MODES = ("adaptive_only", "ecfm", "ecfm+sgcl")
LOSS_COLUMNS = ("L_ce", "L_dice", "L1", "L2", "L3", "L_sgcl", "total")
DEFAULT_SCHEDULE = ((50, 1e-5), (75, 5e-6), (100, 1e-6))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 8
    lr_schedule: tuple = DEFAULT_SCHEDULE
    rmsprop_decay: float = 0.99
    rmsprop_eps: float = 1e-8
    seed: int = 0
    w_ce: float = 0.5
    w_dice: float = 0.5
    w_sgcl: float = 0.1
    fusion_alpha: float = 0.5
    n_threshold_override: int | None = None
    balance_at_inference: bool = True
    run_wide_counts: bool = False
    aux_expert_loss: bool = False
    anchor_reading: str = "equations"
    pretrain_epochs: int = 40
    pretrain_lr: float = 1e-3
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        if self.epochs < 0 or self.pretrain_epochs < 0:
            raise ConfigError("epoch counts must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        for name in ("w_ce", "w_dice", "w_sgcl"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        lrs = [lr for _, lr in self.lr_schedule]
        ends = [e for e, _ in self.lr_schedule]
        if not lrs or any(lr <= 0 for lr in lrs) or lrs != sorted(lrs, reverse=True):
            raise ConfigError("lr_schedule must be positive and non-increasing")
        if ends != sorted(ends) or len(set(ends)) != len(ends):
            raise ConfigError("lr_schedule epoch boundaries must increase")
        if self.pretrain_lr <= 0:
            raise ConfigError("pretrain_lr must be positive")
        if self.n_threshold_override is not None and self.n_threshold_override < 1:
            raise ConfigError("n_threshold_override must be a positive integer")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 1-based ``epoch``; the last piece extends past its end."""
        for last, lr in self.lr_schedule:
            if epoch <= last:
                return lr
        return self.lr_schedule[-1][1]

    # key=value files ------------------------------------------------------------
    def entries(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "encoder":
                out.update({k: str(x) for k, x in asdict(v).items()})
            elif f.name == "lr_schedule":
                out[f.name] = ";".join(f"{e}:{lr!r}" for e, lr in v)
            else:
                out[f.name] = "none" if v is None else str(v)
        return out

    @classmethod
    def from_entries(cls, entries: dict[str, str], base: TrainConfig | None = None) -> TrainConfig:
        base = base or cls()
        enc_keys = {f.name for f in fields(EncoderConfig)}
        kw, enc = {}, {}
        types = {f.name: f.type for f in fields(cls)}
        for k, v in entries.items():
            k = k.replace("-", "_")
            if k in enc_keys:
                enc[k] = int(v)
            elif k == "lr_schedule":
                kw[k] = tuple((int(e), float(lr)) for e, lr in
                              (piece.split(":") for piece in v.split(";") if piece))
            elif k in types:
                kw[k] = _parse_value(k, v, types[k])
            else:
                raise ConfigError(f"unknown config key {k!r}")
        if enc:
            kw["encoder"] = replace(base.encoder, **enc)
        return replace(base, **kw)


def _parse_value(key: str, value: str, typ: str):
    try:
        if "bool" in typ:
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return value.lower() in ("true", "1", "yes")
        if "int" in typ:
            return None if value.lower() == "none" else int(value)
        if "float" in typ:
            return float(value)
        return value
    except ValueError:
        raise ConfigError(f"bad value {value!r} for {key}") from None


def load_config(path, overrides: dict[str, str] | None = None) -> TrainConfig:
    entries = read_manifest(path) if path else {}
    entries.update(overrides or {})
    return TrainConfig.from_entries(entries)


# optimizer ------------------------------------------------------------------------

def rmsprop_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray | None], lr: float,
                 state: dict[str, np.ndarray], trainable: dict[str, bool] | None = None,
                 decay: float = 0.99, eps: float = 1e-8) -> dict[str, np.ndarray]:
    """One RMSprop update; frozen or gradient-less parameters are returned unchanged.

    ``state`` holds the running mean of squared gradients and is updated in place.
    """
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if (trainable is not None and not trainable.get(name, False)) or g is None:
            out[name] = p
            continue
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name}")
        v = state.get(name)
        if v is None:
            v = np.zeros_like(p)
        v = decay * v + (1.0 - decay) * g * g
        state[name] = v
        out[name] = p - lr * g / (np.sqrt(v) + eps)
    return out


class Optimizer:
    """RMSprop over named tensors, keyed ``group/name`` so experts never share state."""

    def __init__(self, decay: float = 0.99, eps: float = 1e-8):
        self.decay, self.eps = decay, eps
        self.state: dict[str, np.ndarray] = {}

    def step(self, group: str, params: dict[str, Tensor], trainable: dict[str, bool], lr: float):
        names = [n for n in params if trainable.get(n)]
        arrays = {f"{group}/{n}": params[n].data for n in names}
        grads = {f"{group}/{n}": params[n].grad for n in names}
        new = rmsprop_step(arrays, grads, lr, self.state, None, self.decay, self.eps)
        for n in names:
            params[n].data = new[f"{group}/{n}"]
            params[n].grad = None


def _clear_grads(params: dict[str, Tensor]) -> None:
    for t in params.values():
        t.grad = None


def _batches(n: int, batch_size: int, rng: np.random.Generator | None):
    order = np.arange(n) if rng is None else rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _finite(value: float, what: str) -> float:
    if not math.isfinite(value):
        raise TrainingError(f"{what} became non-finite ({value})")
    return value


# pretraining ------------------------------------------------------------------------

@dataclass
class PretrainResult:
    weights: dict[str, np.ndarray]
    losses: list[float]


def pretrain(config: TrainConfig, source: Dataset) -> PretrainResult:
    """Train one encoder + head with the segmentation loss on the source training split."""
    enc = config.encoder
    weights = init_encoder(enc, seed=config.seed)
    expert = ExpertParams("pretrained", enc, {n: Tensor(w, requires_grad=True) for n, w in weights.items()},
                          {n: True for n in weights})
    train = source.subset("train") if len(source.train_idx) else source
    opt = Optimizer(config.rmsprop_decay, config.rmsprop_eps)
    losses = []
    for epoch in range(1, config.pretrain_epochs + 1):
        rng = np.random.default_rng([config.seed, 1, epoch])
        total, count = 0.0, 0
        for idx in _batches(len(train), config.batch_size, rng):
            out = forward_expert(expert, train.images[idx])
            gt = train.masks[idx]
            loss = seg_loss(ce_loss(out.P, gt), dice_loss(out.P, gt), config.w_ce, config.w_dice)
            _finite(loss.item(), f"pretrain loss at epoch {epoch}")
            backward(loss)
            opt.step("pretrained", expert.params, expert.trainable, config.pretrain_lr)
            total += loss.item() * len(idx)
            count += len(idx)
        losses.append(total / count)
        log.info("pretrain epoch %d loss %.5f", epoch, losses[-1])
    return PretrainResult(expert.state(), losses)


# fine-tuning --------------------------------------------------------------------------

@dataclass
class StepOutput:
    final: Tensor
    losses: dict[str, Tensor | float]
    chosen: list[int] | None
    log: list


def _fused_logits(ens, chosen: list[int], alpha: float) -> Tensor:
    # selection indices are constants; gradient flows through the arithmetic only
    shape = ens.P(2).shape
    picked = None
    for e in (0, 1, 3):
        sel = np.zeros(shape)
        sel[[i for i, c in enumerate(chosen) if c == e]] = 1.0
        term = Tensor(sel) * ens.P(e)
        picked = term if picked is None else picked + term
    return ens.P(2) + alpha * picked


def forward_step(experts, projections, x, gt, config: TrainConfig, mode: str,
                 state: SelectionState, sample_ids=None) -> StepOutput:
    """Forward pass and loss terms for one training batch."""
    use_sgcl = mode == "ecfm+sgcl" and config.w_sgcl > 0
    losses: dict[str, Tensor | float] = {k: 0.0 for k in ("L1", "L2", "L3", "L_sgcl")}
    chosen, sel_log = None, []
    if mode == "adaptive_only":
        out = forward_expert(experts[2], x)
        final = out.P
        aux = [out.P]
    else:
        x_fg, x_bg = split_input(x, gt) if use_sgcl else (None, None)
        ens = forward_ensemble(experts, x, x_fg, x_bg)
        preds = PredictionSet({e: ens.P(e).data for e in range(4)}, GT=gt)
        res = ppav_batch(preds, state, "training", reset_counts=not config.run_wide_counts,
                         sample_ids=sample_ids)
        chosen, sel_log = res.chosen, res.log
        final = _fused_logits(ens, chosen, config.fusion_alpha)
        aux = [ens.P(1), ens.P(2)]
        if use_sgcl:
            terms = ensemble_sgcl(ens, projections, config.anchor_reading)
            losses.update(L1=terms.L1, L2=terms.L2, L3=terms.L3, L_sgcl=terms.L_sgcl)
    ce, dice = ce_loss(final, gt), dice_loss(final, gt)
    w_sgcl = config.w_sgcl if use_sgcl else 0.0
    total = total_loss(ce, dice, losses["L_sgcl"], config.w_ce, config.w_dice, w_sgcl)
    if config.aux_expert_loss:
        for p in aux:
            total = total + seg_loss(ce_loss(p, gt), dice_loss(p, gt), config.w_ce, config.w_dice)
    losses.update(L_ce=ce, L_dice=dice, total=total)
    return StepOutput(final, losses, chosen, sel_log)


def _value(x) -> float:
    return x.item() if isinstance(x, Tensor) else float(x)


@dataclass
class RunRecord:
    mode: str
    losses: list[dict[str, float]] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    val_metrics: list[dict[str, float]] = field(default_factory=list)
    val_epochs: list[int] = field(default_factory=list)
    selection_log: list = field(default_factory=list)
    checkpoint: Path | None = None

    @property
    def epochs(self) -> list[int]:
        return list(range(1, len(self.losses) + 1))


@dataclass
class FinetuneResult:
    experts: list[ExpertParams]
    projections: SgclProjections | None
    record: RunRecord


def _snapshot_frozen(experts) -> dict[tuple[str, str], bytes]:
    return {(e.kind, n): e.params[n].data.tobytes() for e in experts for n in e.frozen_names()}


def check_freeze(experts, pretrained: dict[str, np.ndarray]) -> None:
    """Raise if any non-trainable parameter differs bitwise from the pretrained weights."""
    for e in experts:
        for n in e.frozen_names():
            ref = pretrained.get(n)
            if ref is None:
                continue
            if e.params[n].data.tobytes() != np.asarray(ref, dtype=np.float64).tobytes():
                raise InvariantError(f"frozen parameter {e.kind}.{n} changed during fine-tuning")


def finetune(config: TrainConfig, pretrained: dict[str, np.ndarray], target: Dataset,
             mode: str = "ecfm+sgcl", validate_every: int = 1) -> FinetuneResult:
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "ecfm":
        config = replace(config, w_sgcl=0.0)
    experts = build_experts(config.encoder, pretrained, adapter_seed=config.seed)
    projections = SgclProjections(config.encoder.embed_dim, seed=config.seed) \
        if mode == "ecfm+sgcl" else None
    frozen_before = _snapshot_frozen(experts)
    train = target.subset("train") if len(target.train_idx) else target
    val = target.subset("val") if len(target.val_idx) else None
    groups = [experts[2]] if mode == "adaptive_only" else [experts[1], experts[2]]

    opt = Optimizer(config.rmsprop_decay, config.rmsprop_eps)
    state = SelectionState(config.n_threshold_override, config.fusion_alpha)
    record = RunRecord(mode)
    for epoch in range(1, config.epochs + 1):
        lr = config.lr_at(epoch)
        rng = np.random.default_rng([config.seed, 2, epoch])
        sums = {k: 0.0 for k in LOSS_COLUMNS}
        count = 0
        epoch_log = []
        for idx in _batches(len(train), config.batch_size, rng):
            step = forward_step(experts, projections, train.images[idx], train.masks[idx], config,
                                mode, state, sample_ids=train.ids[idx])
            _finite(step.losses["total"].item(), f"loss at epoch {epoch}")
            backward(step.losses["total"])
            for e in groups:
                opt.step(e.kind, e.params, e.trainable, lr)
            if projections is not None:
                opt.step("sgcl", projections.params, {n: True for n in projections.params}, lr)
            for e in experts:
                _clear_grads(e.params)
            for k in LOSS_COLUMNS:
                sums[k] += _value(step.losses[k]) * len(idx)
            count += len(idx)
            epoch_log.extend(step.log)
        record.losses.append({k: v / count for k, v in sums.items()})
        record.lrs.append(lr)
        record.selection_log = epoch_log
        if val is not None and validate_every and epoch % validate_every == 0:
            record.val_metrics.append(evaluate(experts, val, config, mode).summary)
            record.val_epochs.append(epoch)
        log.info("%s epoch %d total %.5f", mode, epoch, record.losses[-1]["total"])

    if _snapshot_frozen(experts) != frozen_before:
        raise InvariantError("a frozen parameter changed during fine-tuning")
    check_freeze(experts, pretrained)
    return FinetuneResult(experts, projections, record)


# evaluation ------------------------------------------------------------------------------

@dataclass
class EvalResult:
    summary: dict[str, float]
    per_sample: list[tuple[int, dict[str, float]]]
    per_sample_adaptive: list[tuple[int, dict[str, float]]]
    selection_log: list
    features: dict[str, np.ndarray]
    masks: np.ndarray
    seconds_per_image: float


def evaluate(experts, dataset: Dataset, config: TrainConfig, mode: str = "ecfm+sgcl",
             keep_features: bool = False) -> EvalResult:
    """Inference-mode voting over ``dataset``; metrics are dataset means of per-sample values.

    No ground truth is available at inference, so only the image pass runs.
    Metrics for the adaptive expert alone are kept alongside the fused ones.
    """
    if len(dataset) == 0:
        raise ConfigError("cannot evaluate an empty dataset")
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    state = SelectionState(config.n_threshold_override, config.fusion_alpha)
    per_sample, per_adaptive, sel_log = [], [], []
    feats: dict[str, list] = {"basic": [], "semantic": [], "adaptive": []}
    t0 = time.perf_counter()
    with no_grad():
        for idx in _batches(len(dataset), config.batch_size, None):
            x, gt, ids = dataset.images[idx], dataset.masks[idx], dataset.ids[idx]
            if mode == "adaptive_only" and not keep_features:
                p2 = forward_expert(experts[2], x).P.data
                fused = p2
            else:
                ens = forward_ensemble(experts, x)
                p2 = ens.P(2).data
                if mode == "adaptive_only":
                    fused = p2
                else:
                    preds = PredictionSet({e: ens.P(e).data for e in range(4)})
                    res = ppav_batch(preds, state, "inference", balance=config.balance_at_inference,
                                     reset_counts=not config.run_wide_counts, sample_ids=ids)
                    fused = res.fused
                    sel_log.extend(res.log)
                if keep_features:
                    for e, kind in enumerate(("basic", "semantic", "adaptive")):
                        feats[kind].append(ens.Y(e).data)
            pred, pred2 = binarize(fused), binarize(p2)
            for j, sid in enumerate(ids):
                per_sample.append((int(sid), metrics(pred[j], gt[j])))
                per_adaptive.append((int(sid), metrics(pred2[j], gt[j])))
    seconds = (time.perf_counter() - t0) / len(dataset)
    summary = {k: float(np.mean([m[k] for _, m in per_sample])) for k in METRIC_NAMES}
    features = {k: np.concatenate(v) for k, v in feats.items() if v}
    return EvalResult(summary, per_sample, per_adaptive, sel_log, features,
                      dataset.masks, seconds)


def predict(experts, images, config: TrainConfig, mode: str = "ecfm+sgcl", sample_ids=None):
    """Fused inference logits for ``images`` and the selection log (empty for adaptive_only)."""
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    images = np.asarray(images, dtype=np.float64)
    ids = np.arange(len(images)) if sample_ids is None else np.asarray(sample_ids)
    state = SelectionState(config.n_threshold_override, config.fusion_alpha)
    out, sel_log = [], []
    with no_grad():
        for idx in _batches(len(images), config.batch_size, None):
            if mode == "adaptive_only":
                out.append(forward_expert(experts[2], images[idx]).P.data)
                continue
            ens = forward_ensemble(experts, images[idx])
            res = ppav_batch(PredictionSet({e: ens.P(e).data for e in range(4)}), state, "inference",
                             balance=config.balance_at_inference,
                             reset_counts=not config.run_wide_counts, sample_ids=ids[idx])
            out.append(res.fused)
            sel_log.extend(res.log)
    return np.concatenate(out), sel_log


# records on disk ---------------------------------------------------------------------------

def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x: float) -> str:
    return repr(float(x))


def append_loss_row(path, epoch: int, losses: dict[str, float]) -> None:
    """Append one epoch to a loss-breakdown CSV, writing the header on first use."""
    path = Path(path)
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(("epoch",) + LOSS_COLUMNS)
        w.writerow([epoch, *(_fmt(losses[k]) for k in LOSS_COLUMNS)])


def write_record(out_dir, record: RunRecord) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    loss_path = out / "losses.csv"
    if loss_path.exists():
        loss_path.unlink()
    for epoch, row in zip(record.epochs, record.losses):
        append_loss_row(loss_path, epoch, row)
    _write_csv(out / "schedule.csv", ("epoch", "lr"),
               [(e, _fmt(lr)) for e, lr in zip(record.epochs, record.lrs)])
    _write_csv(out / "val_metrics.csv", ("epoch",) + METRIC_NAMES,
               [(e, *(_fmt(m[k]) for k in METRIC_NAMES)) for e, m in zip(record.val_epochs, record.val_metrics)])
    write_selection_log(record.selection_log, out / "train_selection_log.csv")
    (out / "mode.txt").write_text(f"mode={record.mode}\n")


def write_eval(out_dir, result: EvalResult, patch_size: int, per_sample: bool = True) -> None:
    """Metric summary, per-sample CSVs, selection log, PCA reports and (separately) timing."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "metrics_summary.csv", ("metric", "value"),
               [(k, _fmt(result.summary[k])) for k in METRIC_NAMES])
    if per_sample:
        write_per_sample_metrics(result.per_sample, out / "per_sample_metrics.csv")
        write_per_sample_metrics(result.per_sample_adaptive, out / "per_sample_metrics_adaptive.csv")
    write_selection_log(result.selection_log, out / "selection_log.csv")
    for kind, f in result.features.items():
        pca_distribution(f, result.masks, patch_size).write_csv(out / f"pca_{kind}.csv")
    # wall-clock timing is the one non-reproducible output, so it lives on its own
    (out / "timing.txt").write_text(f"seconds_per_image={result.seconds_per_image!r}\n")


# pipeline ---------------------------------------------------------------------------------

@dataclass(frozen=True)
class Benchmark:
    """The default synthetic transfer task: pretrain on source, fine-tune on target."""

    source: SceneSpec = SceneSpec(num_samples=160, domain="source", seed=0)
    target: SceneSpec = SceneSpec(num_samples=320, domain="target", seed=0)
    config: TrainConfig = TrainConfig()
    validate_every: int = 10


def default_benchmark() -> Benchmark:
    return Benchmark()


@dataclass
class PipelineResult:
    root: Path
    pretrained: Path
    runs: dict[str, Path]
    summaries: dict[str, dict[str, float]]
    baseline: dict[str, float]


def run_pipeline(root, seed: int = 0, modes=MODES, bench: Benchmark | None = None) -> PipelineResult:
    """gen-data -> pretrain -> finetune (each mode) -> evaluate, all under ``root``."""
    bench = bench or default_benchmark()
    root = Path(root)
    config = replace(bench.config, seed=seed)
    src_dir, tgt_dir = root / "data" / "source", root / "data" / "target"
    if not (src_dir / "manifest.csv").exists():
        generate(bench.source, src_dir)
    if not (tgt_dir / "manifest.csv").exists():
        generate(bench.target, tgt_dir)
    source, target = load_manifest(src_dir), load_manifest(tgt_dir)

    pre = pretrain(config, source)
    pre_dir = save_checkpoint(root / "pretrained", config.encoder, {"pretrained": pre.weights},
                              {"seed": seed})
    _write_csv(pre_dir / "pretrain_losses.csv", ("epoch", "seg_loss"),
               [(i + 1, _fmt(v)) for i, v in enumerate(pre.losses)])

    val = target.subset("val")
    frozen = build_experts(config.encoder, pre.weights, adapter_seed=seed)
    baseline = evaluate(frozen, val, config, "adaptive_only")
    write_eval(root / "baseline_eval", baseline, config.encoder.patch_size)

    runs, summaries = {}, {}
    for mode in modes:
        run_dir = root / f"finetune_{mode}"
        res = finetune(config, pre.weights, target, mode, bench.validate_every)
        write_record(run_dir, res.record)
        save_experts(run_dir / "checkpoint", res.experts, res.projections, {"mode": mode, "seed": seed})
        ev = evaluate(res.experts, val, config, mode, keep_features=True)
        write_eval(run_dir / "eval", ev, config.encoder.patch_size)
        runs[mode], summaries[mode] = run_dir, ev.summary
    return PipelineResult(root, pre_dir, runs, summaries, baseline.summary)


def load_pretrained(path) -> tuple[EncoderConfig, dict[str, np.ndarray]]:
    config, groups, _ = load_checkpoint(path)
    if "pretrained" not in groups:
        raise ConfigError(f"{path} is not a pretrained checkpoint")
    return config, groups["pretrained"]


def load_finetuned(path):
    experts, sgcl = load_experts(path)
    return experts, (SgclProjections.from_arrays(sgcl) if sgcl else None)
