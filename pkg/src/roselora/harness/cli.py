"""Command-line entry point: ``roselora <subcommand> [--config PATH] [--seed N] [--out DIR]``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from ..model import accuracy
from ..pruner import keep_count
from ..sparsity_analysis import empirical_bound_sweep
from ..trainer import StepReport, TrainingDiverged, adapted_weights, aggregate_delta_sparsity
from . import checkpoint as ck
from .config import (SWEEP_DEFAULTS, load_config, task_from, train_config_dict,
                     train_config_from)
from .experiments import (dense_baseline, locality, run_data_scaling, run_edit, run_finetune)
from .tasks import pretrain_base

log = logging.getLogger("roselora")

STEP_COLUMNS = list(StepReport.FIELDS)
SWEEP_COLUMNS = ["row_sparsity", "col_sparsity", "rank", "trials", "empirical_mean", "bound"]

EXIT_DIVERGED = 3


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[Dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: row[k] for k in columns})


def write_steps(path: Path, reports: Sequence[StepReport]) -> None:
    write_csv(path, STEP_COLUMNS, (asdict(r) for r in reports))


def write_summary(path: Path, rows: List[Dict]) -> None:
    columns: List[str] = []
    for row in rows:
        columns += [k for k in row if k not in columns]
    write_csv(path, columns, ({k: row.get(k, "") for k in columns} for row in rows))


def write_sweep(path: Path, rows) -> None:
    write_csv(path, SWEEP_COLUMNS, (
        dict(row_sparsity=r.row_sparsity, col_sparsity=r.col_sparsity, rank=r.rank,
             trials=r.trials, empirical_mean=r.empirical_product_sparsity,
             bound=r.theoretical_bound)
        for r in rows
    ))


def budget_violations(adapters, keep: float) -> int:
    """Rows of A / columns of B holding more nonzeros than the keep budget allows."""
    bad = 0
    for ad in adapters:
        bad += int(np.sum(np.count_nonzero(ad.a, axis=1) > keep_count(keep, ad.a.shape[1])))
        bad += int(np.sum(np.count_nonzero(ad.b, axis=0) > keep_count(keep, ad.b.shape[0])))
    return bad


def save_adapters(path: Path, result, tc, step: int) -> None:
    meta = {"beta": tc.beta, "final_keep": tc.schedule.final_keep,
            "steps_seen": [st.steps_seen for st in result.states],
            "train": train_config_dict(tc)}
    states = result.states if result.states else None
    ck.save_checkpoint(path, ck.Checkpoint(
        ck.pack_adapters(result.adapters, states), step=step,
        config_digest=ck.config_digest(train_config_dict(tc)), meta=meta,
    ))


def _base(args, task):
    if args.checkpoint:
        ckpt = ck.load_checkpoint(args.checkpoint)
        if any(k.startswith("base") for k in ckpt.arrays):
            return ck.unpack_base(ckpt)
        return [ad.w0 for ad in ck.unpack_adapters(ckpt)[0]]
    return pretrain_base(task)


def _setup(args, kind=None):
    cfg = load_config(args.config, kind=kind)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    cfg["seed"] = seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, seed, out


def cmd_pretrain(args) -> int:
    cfg, seed, out = _setup(args, args.kind)
    task = task_from(cfg)
    base = pretrain_base(task)
    path = Path(args.checkpoint) if args.checkpoint else out / "base.ckpt"
    ck.save_checkpoint(path, ck.Checkpoint(
        ck.pack_base(base), config_digest=ck.config_digest(cfg["task"]),
        meta={"task": cfg["task"], "seed": seed},
    ))
    write_summary(out / "summary.csv", [dict(
        seed=seed, kind=task.kind,
        pretrain_accuracy=accuracy(base, *task.pretrain_split),
        locality_accuracy=accuracy(base, *task.locality_split),
    )])
    print(f"base model written to {path}")
    return 0


def cmd_train(args) -> int:
    cfg, seed, out = _setup(args, args.kind or "classification")
    task = task_from(cfg)
    tc = train_config_from(cfg)
    base = _base(args, task)
    if task.kind == "classification":
        acc, result = run_finetune(task, tc, base)
    else:
        metrics, result = run_edit(task, tc, base)
        acc = metrics.edit_success
    write_steps(out / "steps.csv", result.reports)
    save_adapters(out / "adapter.ckpt", result, tc, len(result.reports))
    weights = adapted_weights(result.adapters)
    write_summary(out / "summary.csv", [dict(
        seed=seed, kind=task.kind, accuracy=acc,
        locality=locality(base, weights, task.locality_split[0]),
        delta_sparsity=aggregate_delta_sparsity(result.adapters),
        budget_violations=budget_violations(result.adapters, tc.schedule.final_keep),
    )])
    print(f"accuracy {acc:.4f}")
    return 0


def _seeds(args, cfg) -> List[int]:
    if args.seed is not None:
        return [args.seed]
    return [int(s) for s in cfg.get("experiment", {}).get("seeds", [cfg.get("seed", 0)])]


def cmd_edit(args) -> int:
    cfg, _, out = _setup(args, "fact-edit")
    rows = []
    for seed in _seeds(args, cfg):
        task = task_from(cfg, seed)
        tc = train_config_from(cfg, seed)
        base = pretrain_base(task)
        for method, mcfg in (("lora", dense_baseline(tc)), ("roselora", tc)):
            metrics, result = run_edit(task, mcfg, base)
            write_steps(out / f"steps_{method}_seed{seed}.csv", result.reports)
            save_adapters(out / f"{method}_seed{seed}.ckpt", result, mcfg, len(result.reports))
            rows.append(dict(seed=seed, method=method, edit_success=metrics.edit_success,
                             locality=metrics.locality,
                             delta_sparsity=aggregate_delta_sparsity(result.adapters)))
            print(f"seed {seed} {method:8s} edit_success {metrics.edit_success:.4f} "
                  f"locality {metrics.locality:.4f}")
    write_summary(out / "summary.csv", rows)
    return 0


def cmd_forgetting(args) -> int:
    cfg, _, out = _setup(args, "classification")
    rows = []
    for seed in _seeds(args, cfg):
        task = task_from(cfg, seed)
        tc = train_config_from(cfg, seed)
        base = pretrain_base(task)
        before = accuracy(base, *task.pretrain_split)
        for method, mcfg in (("lora", dense_baseline(tc)), ("roselora", tc)):
            acc, result = run_finetune(task, mcfg, base)
            after = accuracy(adapted_weights(result.adapters), *task.pretrain_split)
            retention = after / before if before > 0 else 1.0
            write_steps(out / f"steps_{method}_seed{seed}.csv", result.reports)
            save_adapters(out / f"{method}_seed{seed}.ckpt", result, mcfg, len(result.reports))
            rows.append(dict(seed=seed, method=method, adapt_accuracy=acc,
                             pretrain_accuracy_before=before, pretrain_accuracy_after=after,
                             retention=retention))
            print(f"seed {seed} {method:8s} adapt {acc:.4f} retention {retention:.4f}")
    write_summary(out / "summary.csv", rows)
    return 0


def cmd_data_scaling(args) -> int:
    cfg, _, out = _setup(args, "classification")
    fractions = [float(f) for f in (args.fractions or cfg["experiment"]["fractions"])]
    rows = []
    for seed in _seeds(args, cfg):
        task = task_from(cfg, seed)
        tc = train_config_from(cfg, seed)
        for row in run_data_scaling(task, tc, fractions):
            rows.append(dict(seed=seed, **row))
            print(f"seed {seed} fraction {row['fraction']:.3f} lora {row['lora_accuracy']:.4f} "
                  f"roselora {row['roselora_accuracy']:.4f}")
    write_summary(out / "summary.csv", rows)
    return 0


def cmd_analyze_bound(args) -> int:
    cfg, seed, out = _setup(args)
    sweep = dict(SWEEP_DEFAULTS)
    sweep.update(cfg.get("sweep", {}) or {})
    for key in ("rank", "d1", "d2", "trials"):
        if getattr(args, key) is not None:
            sweep[key] = getattr(args, key)
    if args.grid:
        sweep["grid"] = args.grid
    rows = empirical_bound_sweep(sweep["grid"], int(sweep["rank"]), int(sweep["d1"]),
                                 int(sweep["d2"]), int(sweep["trials"]), seed)
    write_sweep(out / "bound_sweep.csv", rows)
    worst = min(r.empirical_product_sparsity - r.theoretical_bound for r in rows)
    print(f"{len(rows)} cells, min(empirical - bound) = {worst:.6f}")
    return 0 if worst >= -1e-12 else 1


def cmd_eval(args) -> int:
    if not args.checkpoint:
        print("eval needs --checkpoint", file=sys.stderr)
        return 2
    ckpt = ck.load_checkpoint(args.checkpoint)
    adapters, _ = ck.unpack_adapters(ckpt)
    keep = float(ckpt.meta.get("final_keep", 1.0))
    cfg, seed, out = _setup(args, args.kind)
    task = task_from(cfg)
    base = [ad.w0 for ad in adapters]
    weights = adapted_weights(adapters)
    row = dict(
        seed=seed, kind=task.kind, step=ckpt.step,
        adapt_accuracy=accuracy(weights, *task.adapt_split),
        locality=locality(base, weights, task.locality_split[0]),
        pretrain_accuracy=accuracy(weights, *task.pretrain_split),
        delta_sparsity=aggregate_delta_sparsity(adapters),
        budget_violations=budget_violations(adapters, keep),
    )
    write_summary(out / "eval.csv", [row])
    for k, v in row.items():
        print(f"{k}: {v}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="roselora", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML config file")
        sp.add_argument("--seed", type=int, help="overrides the config seed(s)")
        sp.add_argument("--out", default="runs", help="output directory")
        sp.add_argument("--checkpoint", help="checkpoint to read (or write, for pretrain)")
        return sp

    for name, fn in (("pretrain", cmd_pretrain), ("train", cmd_train), ("eval", cmd_eval)):
        sp = common(sub.add_parser(name))
        sp.add_argument("--kind", choices=["classification", "fact-edit"])
        sp.set_defaults(func=fn)
    common(sub.add_parser("edit")).set_defaults(func=cmd_edit)
    common(sub.add_parser("forgetting")).set_defaults(func=cmd_forgetting)
    sp = common(sub.add_parser("data-scaling"))
    sp.add_argument("--fractions", type=float, nargs="+")
    sp.set_defaults(func=cmd_data_scaling)
    sp = common(sub.add_parser("analyze-bound"))
    sp.add_argument("--grid", type=float, nargs="+")
    sp.add_argument("--rank", type=int)
    sp.add_argument("--d1", type=int)
    sp.add_argument("--d2", type=int)
    sp.add_argument("--trials", type=int)
    sp.set_defaults(func=cmd_analyze_bound)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ck.CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return exc.code
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        if exc.adapters is not None:
            path = Path(args.out) / "last_good.ckpt"
            ck.save_checkpoint(path, ck.Checkpoint(
                ck.pack_adapters(exc.adapters, exc.states), step=exc.step - 1,
                meta={"steps_seen": [s.steps_seen for s in exc.states],
                      "beta": exc.states[0].beta if exc.states else 0.8},
            ))
            print(f"last finite state written to {path}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
