"""Command-line entry point.

Every verb writes into a staging directory next to ``--out`` and renames it
into place only on success, together with ``run_manifest.txt`` recording the
command, seed, resolved config and content hashes of the inputs.

Exit codes: 0 success, 1 configuration error, 2 I/O or malformed input,
3 invariant breach or aborted training.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import os
import shutil
import sys
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .checks import GRAD_TOLERANCE, gradient_suite, ppav_simulation
from .data import SceneSpec, generate, load_manifest
from .errors import ConfigError, ContractError, DimensionError, InvariantError, TrainingError
from .experts import build_experts, count_complexity, read_manifest, save_checkpoint, save_experts
from .losses import METRIC_NAMES, read_per_sample_metrics
from .ppav import write_selection_log
from .tensor import save_icmt
from .trainer import (MODES, TrainConfig, evaluate, finetune, load_config, load_finetuned,
                      load_pretrained, predict, pretrain, write_eval, write_record)

VERBS = ("gen-data", "pretrain", "finetune", "infer", "evaluate", "grad-check", "ppav-sim", "report")
RUN_MANIFEST = "run_manifest.txt"

log = logging.getLogger("icmoe")


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; here that is a configuration error
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# hashing and staging -----------------------------------------------------------------

def content_hash(path) -> str:
    """sha256 of a file, or of a directory's sorted (relative path, file hash) listing."""
    path = Path(path)
    if path.is_file():
        return hashlib.sha256(path.read_bytes()).hexdigest()
    if not path.is_dir():
        raise FileNotFoundError(f"no such input: {path}")
    h = hashlib.sha256()
    for f in sorted(p for p in path.rglob("*") if p.is_file()):
        rel = f.relative_to(path).as_posix()
        if rel == RUN_MANIFEST or rel.endswith("timing.txt"):
            continue
        h.update(f"{rel}\0{hashlib.sha256(f.read_bytes()).hexdigest()}\n".encode())
    return h.hexdigest()


@contextmanager
def staged_output(out, overwrite: bool = False):
    """Yield a temp directory that replaces ``out`` only if the block succeeds."""
    out = Path(out)
    if out.exists() and not overwrite:
        raise FileExistsError(f"output exists (use --overwrite): {out}")
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    os.chmod(tmp, 0o755)
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if out.exists():
        old = out.with_name(f".{out.name}.old")
        os.replace(out, old)
        os.replace(tmp, out)
        shutil.rmtree(old, ignore_errors=True)
    else:
        os.replace(tmp, out)


def write_run_manifest(out: Path, verb: str, argv, seed, config: dict[str, str], inputs: dict) -> None:
    lines = [f"verb={verb}", f"argv={' '.join(argv)}", f"seed={seed}"]
    lines += [f"config.{k}={v}" for k, v in sorted(config.items())]
    lines += [f"input.{k}=sha256:{content_hash(p)}" for k, p in sorted(inputs.items())]
    (out / RUN_MANIFEST).write_text("\n".join(lines) + "\n")


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# config resolution ---------------------------------------------------------------------

def _overrides(args) -> dict[str, str]:
    out = {}
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    for flag, key in (("seed", "seed"), ("fusion_alpha", "fusion_alpha"), ("w_sgcl", "w_sgcl"),
                      ("threshold", "n_threshold_override")):
        value = getattr(args, flag, None)
        if value is not None:
            out[key] = str(value)
    return out


def _train_config(args) -> TrainConfig:
    if args.config and not Path(args.config).exists():
        raise FileNotFoundError(f"config file not found: {args.config}")
    return load_config(args.config, _overrides(args))


def _require(args, *names):
    for n in names:
        if getattr(args, n) is None:
            raise UsageError(f"{args.verb} needs --{n.replace('_', '-')}")


# verbs --------------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    _require(args, "out")
    entries = read_manifest(args.spec) if args.spec else {}
    entries.update(_overrides(args))
    spec = SceneSpec.from_entries(entries)
    inputs = {"spec": args.spec} if args.spec else {}
    with staged_output(args.out, args.overwrite) as tmp:
        generate(spec, tmp)
        write_run_manifest(tmp, args.verb, args.argv, spec.seed, spec.entries(), inputs)
    print(f"wrote {spec.num_samples} {spec.domain} samples to {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    _require(args, "data", "out")
    config = _train_config(args)
    source = load_manifest(args.data)
    res = pretrain(config, source)
    with staged_output(args.out, args.overwrite) as tmp:
        save_checkpoint(tmp, config.encoder, {"pretrained": res.weights}, {"seed": config.seed})
        _write_rows(tmp / "pretrain_losses.csv", ("epoch", "seg_loss"),
                    [(i + 1, repr(v)) for i, v in enumerate(res.losses)])
        write_run_manifest(tmp, args.verb, args.argv, config.seed, config.entries(), {"data": args.data})
    final = f"{res.losses[-1]:.5f}" if res.losses else "n/a"
    print(f"pretrained {config.pretrain_epochs} epochs, final loss {final}")
    return 0


def cmd_finetune(args) -> int:
    _require(args, "pretrained", "data", "out")
    config = _train_config(args)
    enc, weights = load_pretrained(args.pretrained)
    if enc != config.encoder:
        raise ConfigError(f"pretrained encoder {enc} does not match config {config.encoder}")
    target = load_manifest(args.data)
    mode = args.mode or "ecfm+sgcl"
    res = finetune(config, weights, target, mode, validate_every=args.validate_every)
    with staged_output(args.out, args.overwrite) as tmp:
        write_record(tmp, res.record)
        save_experts(tmp / "checkpoint", res.experts, res.projections,
                     {"mode": mode, "seed": config.seed})
        write_run_manifest(tmp, args.verb, args.argv, config.seed, config.entries(),
                           {"data": args.data, "pretrained": args.pretrained})
    final = f"{res.record.losses[-1]['total']:.5f}" if res.record.losses else "n/a"
    print(f"{mode}: final total loss {final}")
    return 0


def _load_models(args, config: TrainConfig):
    """Experts and mode from --checkpoint, or the frozen trio from --pretrained."""
    if args.checkpoint:
        experts, _ = load_finetuned(args.checkpoint)
        saved = read_manifest(Path(args.checkpoint) / "manifest.txt").get("mode")
        return experts, args.mode or saved or "ecfm+sgcl", {"checkpoint": args.checkpoint}
    if args.pretrained:
        enc, weights = load_pretrained(args.pretrained)
        experts = build_experts(enc, weights, adapter_seed=config.seed)
        return experts, args.mode or "adaptive_only", {"pretrained": args.pretrained}
    raise UsageError(f"{args.verb} needs --checkpoint or --pretrained")


def cmd_infer(args) -> int:
    _require(args, "data", "out")
    config = _train_config(args)
    experts, mode, inputs = _load_models(args, config)
    ds = load_manifest(args.data).subset(args.split)
    logits, sel_log = predict(experts, ds.images, config, mode, ds.ids)
    with staged_output(args.out, args.overwrite) as tmp:
        (tmp / "logits").mkdir()
        (tmp / "masks").mkdir()
        for sid, z in zip(ds.ids, logits):
            save_icmt(tmp / "logits" / f"{sid:04d}.icmt", z)
            save_icmt(tmp / "masks" / f"{sid:04d}.icmt", (z >= 0).astype(np.float64))
        write_selection_log(sel_log, tmp / "selection_log.csv")
        write_run_manifest(tmp, args.verb, args.argv, config.seed, config.entries(),
                           {**inputs, "data": args.data})
    print(f"{mode}: wrote {len(ds)} predictions to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    _require(args, "data", "out")
    config = _train_config(args)
    experts, mode, inputs = _load_models(args, config)
    ds = load_manifest(args.data).subset(args.split)
    res = evaluate(experts, ds, config, mode, keep_features=True)
    with staged_output(args.out, args.overwrite) as tmp:
        write_eval(tmp, res, experts[0].config.patch_size, per_sample=args.per_sample)
        (tmp / "mode.txt").write_text(f"mode={mode}\n")
        write_run_manifest(tmp, args.verb, args.argv, config.seed, config.entries(),
                           {**inputs, "data": args.data})
    print(f"{mode} on {len(ds)} {args.split} samples:")
    for k in METRIC_NAMES:
        print(f"  {k:<10}{res.summary[k]:.4f}")
    return 0


def cmd_grad_check(args) -> int:
    seed = args.seed if args.seed is not None else 0
    worst = gradient_suite(args.instances, seed)
    rows = [(k, repr(v), "pass" if v < GRAD_TOLERANCE else "FAIL") for k, v in worst.items()]
    print(f"{'term':<12}{'max_rel_error':>16}  status")
    for k, v, s in rows:
        print(f"{k:<12}{float(v):>16.3e}  {s}")
    if args.out:
        with staged_output(args.out, args.overwrite) as tmp:
            _write_rows(tmp / "grad_check.csv", ("term", "max_rel_error", "status"), rows)
            write_run_manifest(tmp, args.verb, args.argv, seed, {"instances": str(args.instances)}, {})
    if any(s != "pass" for *_, s in rows):
        raise InvariantError(f"gradient check above tolerance {GRAD_TOLERANCE}")
    return 0


def cmd_ppav_sim(args) -> int:
    seed = args.seed if args.seed is not None else 0
    res = ppav_simulation(args.batch, args.threshold, seed)
    print(f"{'sample':>6}  {'score_0':>8} {'score_1':>8} {'score_3':>8}  chosen  count")
    for r in res.log:
        scores = " ".join(f"{s:8.4f}" for s in r.scores)
        print(f"{r.sample_id:>6}  {scores}  {r.chosen:>6}  {r.count_after:>5}")
    print("counts: " + ", ".join(f"{e}={c}" for e, c in sorted(res.counts.items()))
          + f" (sum {sum(res.counts.values())})")
    if args.out:
        with staged_output(args.out, args.overwrite) as tmp:
            write_selection_log(res.log, tmp / "selection_log.csv")
            _write_rows(tmp / "counts.csv", ("candidate", "count"), sorted(res.counts.items()))
            write_run_manifest(tmp, args.verb, args.argv, seed,
                               {"batch": str(args.batch), "threshold": str(args.threshold)}, {})
    return 0


def _read_kv_csv(path: Path) -> dict[str, str]:
    with open(path, newline="") as fh:
        return {r["metric"]: r["value"] for r in csv.DictReader(fh)}


def find_runs(run_dir: Path) -> dict[str, Path]:
    """Mode -> run directory for every ``finetune`` output (with an ``eval/``) under ``run_dir``."""
    runs = {}
    for d in sorted(p for p in run_dir.iterdir() if p.is_dir()):
        if (d / "mode.txt").exists() and (d / "eval").is_dir():
            runs[read_manifest(d / "mode.txt")["mode"]] = d
    return {m: runs[m] for m in MODES if m in runs}


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise FileNotFoundError(f"no run directory at {run_dir}")
    runs = find_runs(run_dir)
    if not runs:
        raise FileNotFoundError(f"no evaluated fine-tuning runs under {run_dir}")
    out = Path(args.out) if args.out else run_dir / "report"
    table, per_sample, complexity = [], {}, []
    for mode, d in runs.items():
        ev = d / "eval"
        for f in ("metrics_summary.csv", "per_sample_metrics.csv"):
            if not (ev / f).exists():
                raise FileNotFoundError(f"missing record {ev / f}")
        summary = _read_kv_csv(ev / "metrics_summary.csv")
        table.append((mode, *(summary[k] for k in METRIC_NAMES)))
        rows = read_per_sample_metrics(ev / "per_sample_metrics.csv")
        per_sample[mode] = {sid: m["DSC"] for sid, m in rows}
        experts, _ = load_finetuned(d / "checkpoint")
        c = count_complexity(experts)
        timing = "nan"
        if (ev / "timing.txt").exists():
            timing = read_manifest(ev / "timing.txt")["seconds_per_image"]
        complexity.append((mode, c["total_params"], c["trainable_params"],
                           c["mult_accumulate_per_image"], timing))

    with staged_output(out, args.overwrite) as tmp:
        _write_rows(tmp / "ablation.csv", ("mode",) + METRIC_NAMES, table)
        ids = sorted(set().union(*(set(v) for v in per_sample.values())))
        _write_rows(tmp / "per_sample_dsc.csv", ("sample_id",) + tuple(f"DSC_{m}" for m in per_sample),
                    [(i, *(repr(per_sample[m].get(i, float("nan"))) for m in per_sample)) for i in ids])
        for mode, d in runs.items():
            for f in sorted((d / "eval").glob("pca_*.csv")):
                shutil.copyfile(f, tmp / f"pca_{mode}_{f.name[len('pca_'):]}")
        _write_rows(tmp / "complexity.csv", ("mode", "total_params", "trainable_params",
                                             "mult_accumulate_per_image", "seconds_per_image"), complexity)
        write_run_manifest(tmp, args.verb, args.argv, "none", {}, {"run_dir": run_dir})

    print(f"{'mode':<15}" + "".join(f"{k:>11}" for k in METRIC_NAMES))
    for row in table:
        print(f"{row[0]:<15}" + "".join(f"{float(v):>11.4f}" for v in row[1:]))
    print(f"report written to {out}")
    return 0

COMMANDS = {
    "gen-data": cmd_gen_data, "pretrain": cmd_pretrain, "finetune": cmd_finetune,
    "infer": cmd_infer, "evaluate": cmd_evaluate, "grad-check": cmd_grad_check,
    "ppav-sim": cmd_ppav_sim, "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="icmoe", description="Expert-ensemble segmentation toolkit on synthetic scenes.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    def add(name, help_, *extras):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--out", help="output directory (replaced atomically)")
        sp.add_argument("--overwrite", action="store_true", help="replace an existing --out")
        sp.add_argument("--seed", type=int)
        for extra in extras:
            extra(sp)
        return sp

    def config(sp):
        sp.add_argument("--config", help="key=value training config file")
        sp.add_argument("--fusion-alpha", type=float)
        sp.add_argument("--w-sgcl", type=float)
        sp.add_argument("--threshold", type=int, help="selection cap override")
        sp.add_argument("overrides", nargs="*", metavar="key=value")

    def data(sp):
        sp.add_argument("--data", help="dataset directory written by gen-data")

    def models(sp):
        sp.add_argument("--checkpoint", help="fine-tuned checkpoint directory")
        sp.add_argument("--pretrained", help="pretrained checkpoint (frozen experts)")
        sp.add_argument("--mode", choices=MODES)
        sp.add_argument("--split", choices=("val", "train", "all"), default="val")

    g = add("gen-data", "render a synthetic dataset")
    g.add_argument("--spec", help="key=value scene spec file")
    g.add_argument("overrides", nargs="*", metavar="key=value")
    add("pretrain", "train the source-domain encoder", config, data)
    ft = add("finetune", "fine-tune the expert trio on a target dataset", config, data)
    ft.add_argument("--pretrained")
    ft.add_argument("--mode", choices=MODES)
    ft.add_argument("--validate-every", type=int, default=10, help="epochs between val passes (0: off)")
    add("infer", "write fused logits and masks", config, data, models)
    ev = add("evaluate", "score a checkpoint on a dataset split", config, data, models)
    ev.add_argument("--per-sample", action="store_true", help="also write per-sample metric CSVs")
    gc = add("grad-check", "finite-difference check of every loss term")
    gc.add_argument("--instances", type=int, default=100)
    ps = add("ppav-sim", "simulate balanced voting on one random batch")
    ps.add_argument("--batch", type=int, default=12)
    ps.add_argument("--threshold", type=int)
    rp = add("report", "tables from a run directory")
    rp.add_argument("run_dir")
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        if argv and not argv[0].startswith("-") and argv[0] not in VERBS:
            raise UsageError(f"unknown verb {argv[0]!r}; expected one of {', '.join(VERBS)}")
        args = build_parser().parse_args(argv)
        args.argv = argv
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(name)s: %(message)s")
        return COMMANDS[args.verb](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except (OSError, ContractError, DimensionError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return 2
    except (InvariantError, TrainingError) as e:
        print(f"invariant breach: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
