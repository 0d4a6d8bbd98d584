"""Command-line front end: generate, train-foundation, transfer, evaluate,
ablate-experts.

Every run writes a reproducibility stamp (config hash, seed, versions) into
its output directory. Failures exit with a single machine-readable line on
stderr: config problems exit 1, numerical failures 2, I/O errors 3.
"""

import argparse
import os
import sys

import numpy as np

from . import __version__
from . import continual as ct
from .checkpoint import load_checkpoint, save_checkpoint
from .config import parse_config
from .dataset import build_dataset, load_dataset, sample_seed, save_dataset
from .errors import ConfigError, NumericsError
from .model import GatedWaveletOperator, ModelConfig


def _stamp(out_dir, cfg, seed):
    os.makedirs(out_dir, exist_ok=True)
    lines = [
        f"config_hash = {cfg.config_hash()}",
        f"seed = {seed}",
        f"package = artifact {__version__}",
        f"numpy = {np.__version__}",
        f"python = {sys.version_info.major}.{sys.version_info.minor}.{sys.version_info.micro}",
    ]
    with open(os.path.join(out_dir, "stamp.txt"), "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _split(ds, entry):
    n_train = min(entry.n_train, ds.n)
    return ds.subset(0, n_train), ds.subset(ds.n - entry.n_test, ds.n)


def _load_entry(cfg, entry):
    path = entry.dataset_path(cfg.data_dir)
    if not os.path.isdir(path):
        raise ConfigError(f"task {entry.name}: dataset {path} does not exist "
                          "(run `generate` first or fix the path)")
    return load_dataset(path)


def _model_config(cfg, datasets, overrides=None):
    md = cfg.model_defaults()
    if overrides:
        md.update(overrides)
    first = datasets[0]
    labels = [t.label for t in cfg.tasks]
    md.setdefault("gate_hidden", (512, 256, 128, 64, 32))
    md.setdefault("gate_hidden_2d", (128, 64))
    md["max_tasks"] = max([md.get("max_tasks", 6)] + [l + 1 for l in labels])
    return ModelConfig(rank=first.rank, grid=first.grid_shape(),
                       in_channels=first.window, out_channels=1, **md)


def _train_config(cfg, phase, seed, overrides=None):
    td = cfg.train_defaults()
    if overrides:
        td.update(overrides)
    if phase == "transfer":
        return ct.TrainConfig(epochs=td["transfer_epochs"], batch=td["batch"],
                              lr=td["transfer_lr"], weight_decay=td["weight_decay"],
                              step_size=td["transfer_step_size"], gamma=td["gamma"],
                              seed=seed, phase="transfer", clip_norm=td["clip_norm"])
    return ct.TrainConfig(epochs=td["epochs"], batch=td["batch"], lr=td["lr"],
                          weight_decay=td["weight_decay"], step_size=td["step_size"],
                          gamma=td["gamma"], seed=seed, phase="foundation",
                          clip_norm=td["clip_norm"])


# ---------------------------------------------------------------------------
# commands

def cmd_generate(cfg, args):
    made = []
    for entry in cfg.tasks:
        if not entry.recipe:
            continue
        pde = entry.pde_spec()
        grf = entry.grf_spec()
        n = entry.n_train + entry.n_test
        base = sample_seed(args.seed, entry.label)
        ds = build_dataset(pde, grf, n, base, label=entry.label, window=entry.window)
        save_dataset(ds, entry.dataset_path(cfg.data_dir))
        made.append(entry.name)
    _stamp(cfg.data_dir, cfg, args.seed)
    print(f"generated {len(made)} dataset(s): {', '.join(made) or 'none'}")


def cmd_train_foundation(cfg, args):
    if not cfg.tasks:
        raise ConfigError("train-foundation needs at least one [task] section")
    entries = cfg.tasks[:args.n_foundation] if args.n_foundation else cfg.tasks
    splits = [_split(_load_entry(cfg, e), e) for e in entries]
    trains = [s[0] for s in splits]
    model = GatedWaveletOperator(_model_config(cfg, trains), seed=args.seed)
    tc = _train_config(cfg, "foundation", args.seed)
    memory = ct.SemanticMemory()
    out = args.out or os.path.join(cfg.checkpoint_dir, "foundation")
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "run.log"), "w", encoding="utf-8", newline="\n") as log:
        losses = ct.train_foundation(model, trains, tc, memory=memory, log=log)
    save_checkpoint(out, model, memory,
                    meta={"phase": "foundation", "seed": args.seed,
                          "tasks": ",".join(e.name for e in entries)})
    _stamp(out, cfg, args.seed)
    print(f"foundation trained for {tc.epochs} epochs; "
          f"final loss {losses[-1] if losses else float('nan'):.4e}; saved to {out}")


def cmd_transfer(cfg, args):
    entry = cfg.task(args.task)
    src = args.src or os.path.join(cfg.checkpoint_dir, "foundation")
    model, memory, _meta = load_checkpoint(src)
    train, _test = _split(_load_entry(cfg, entry), entry)
    tc = _train_config(cfg, "transfer", args.seed)
    out = args.out or os.path.join(cfg.checkpoint_dir, f"after-{entry.name}")
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "run.log"), "w", encoding="utf-8", newline="\n") as log:
        _snap, losses = ct.combinatorial_transfer(model, memory, train, tc, log=log,
                                                  overwrite=args.overwrite)
    save_checkpoint(out, model, memory,
                    meta={"phase": "transfer", "seed": args.seed, "task": entry.name})
    _stamp(out, cfg, args.seed)
    print(f"transfer to {entry.name!r} done in {tc.epochs} epochs; "
          f"final loss {losses[-1] if losses else float('nan'):.4e}; saved to {out}")


def cmd_evaluate(cfg, args):
    src = args.src or os.path.join(cfg.checkpoint_dir, "foundation")
    model, memory, _meta = load_checkpoint(src)
    entries = [cfg.task(args.task)] if args.task else cfg.tasks
    out = args.out or cfg.report_dir
    os.makedirs(out, exist_ok=True)
    rows = []
    test_sets = []
    for entry in entries:
        _train, test = _split(_load_entry(cfg, entry), entry)
        if entry.label in memory:
            ct.activate_task(model, memory, entry.label)
        acc = ct.rollout_accuracy(model, test)
        mean, lo, hi = ct.accuracy_summary(acc)
        rows += [(entry.label, t + 1, mean[t], lo[t], hi[t]) for t in range(len(mean))]
        test_sets.append((entry.label, test))
    ct.write_metrics_csv(os.path.join(out, "metrics.csv"), rows)
    labels = [lab for lab, _ in test_sets]
    mat = [[ct.cosine_similarity(a.outputs, b.outputs) for _, b in test_sets]
           for _, a in test_sets]
    ct.write_similarity_csv(os.path.join(out, "similarity.csv"), labels, mat)
    _write_plot_script(os.path.join(out, "plot_metrics.py"))
    _stamp(out, cfg, args.seed)
    print(f"evaluated {len(entries)} task(s); reports in {out}")


def cmd_ablate_experts(cfg, args):
    if len(cfg.tasks) < 3:
        raise ConfigError("ablate-experts needs >= 3 [task] sections "
                          "(two foundation, one transfer)")
    ab = cfg.ablate
    counts = ab.get("experts", (3, 6))
    n_seeds = ab.get("seeds", 3)
    overrides = {}
    if "epochs" in ab:
        overrides["epochs"] = ab["epochs"]
    if "transfer_epochs" in ab:
        overrides["transfer_epochs"] = ab["transfer_epochs"]
    foundation_entries = cfg.tasks[:2]
    transfer_entry = cfg.tasks[2]
    f_splits = [_split(_load_entry(cfg, e), e) for e in foundation_entries]
    t_train, t_test = _split(_load_entry(cfg, transfer_entry), transfer_entry)
    out = args.out or cfg.report_dir
    os.makedirs(out, exist_ok=True)
    lines = ["experts,seed,task,rel_l2"]
    for n_experts in counts:
        for s in range(n_seeds):
            seed = args.seed + s
            mc = _model_config(cfg, [sp[0] for sp in f_splits],
                               overrides={"experts": n_experts,
                                          "bases": tuple(range(1, n_experts + 1))})
            model = GatedWaveletOperator(mc, seed=seed)
            memory = ct.SemanticMemory()
            ct.train_foundation(model, [sp[0] for sp in f_splits],
                                _train_config(cfg, "foundation", seed, overrides),
                                memory=memory)
            ct.combinatorial_transfer(model, memory, t_train,
                                      _train_config(cfg, "transfer", seed, overrides))
            err = 1.0 - float(np.mean(ct.one_step_accuracy(model, t_test)))
            lines.append(f"{n_experts},{seed},{transfer_entry.label},{err:.8f}")
    with open(os.path.join(out, "ablation.csv"), "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    _stamp(out, cfg, args.seed)
    print(f"ablation over experts {tuple(counts)} x {n_seeds} seed(s); "
          f"wrote {os.path.join(out, 'ablation.csv')}")


_PLOT_SCRIPT = '''\
#!/usr/bin/env python3
"""Render accuracy curves and the task-similarity matrix from the CSVs
written by `waveop evaluate`. Self-contained; needs matplotlib."""
import csv
import sys
from collections import defaultdict

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

metrics = sys.argv[1] if len(sys.argv) > 1 else "metrics.csv"
similarity = sys.argv[2] if len(sys.argv) > 2 else "similarity.csv"

curves = defaultdict(lambda: ([], [], [], []))
with open(metrics) as fh:
    for row in csv.DictReader(fh):
        c = curves[row["task"]]
        c[0].append(int(row["step"]))
        c[1].append(float(row["mean_acc"]))
        c[2].append(float(row["ci95_low"]))
        c[3].append(float(row["ci95_high"]))

fig, ax = plt.subplots(figsize=(7, 4))
for task, (steps, mean, lo, hi) in sorted(curves.items()):
    ax.plot(steps, mean, label=f"task {task}")
    ax.fill_between(steps, lo, hi, alpha=0.2)
ax.set_xlabel("forecast step")
ax.set_ylabel("accuracy")
ax.set_ylim(0, 1.05)
ax.legend()
fig.tight_layout()
fig.savefig("accuracy_curves.png", dpi=150)

rows = list(csv.reader(open(similarity)))
labels = rows[0][1:]
mat = [[float(v) for v in r[1:]] for r in rows[1:]]
fig, ax = plt.subplots(figsize=(4.5, 4))
im = ax.imshow(mat, vmin=0, vmax=1, cmap="viridis")
ax.set_xticks(range(len(labels)), labels)
ax.set_yticks(range(len(labels)), labels)
for i in range(len(labels)):
    for j in range(len(labels)):
        ax.text(j, i, f"{mat[i][j]:.2f}", ha="center", va="center", color="w")
fig.colorbar(im)
fig.tight_layout()
fig.savefig("similarity_matrix.png", dpi=150)
print("wrote accuracy_curves.png and similarity_matrix.png")
'''


def _write_plot_script(path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_PLOT_SCRIPT)


# ---------------------------------------------------------------------------
# argument handling

def _build_parser():
    p = argparse.ArgumentParser(prog="waveop",
                                description="continual wavelet-expert operator lab")
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="path to the run config")
    common.add_argument("--seed", type=int, default=None,
                        help="override the config seed (env: WAVEOP_SEED)")
    common.add_argument("--out", default=None,
                        help="override the output directory (env: WAVEOP_OUT)")
    sub.add_parser("generate", parents=[common],
                   help="write dataset containers for every task with a recipe")
    tf = sub.add_parser("train-foundation", parents=[common],
                        help="jointly train on the configured tasks")
    tf.add_argument("--n-foundation", type=int, default=0,
                    help="only use the first N tasks (0 = all)")
    tr = sub.add_parser("transfer", parents=[common],
                        help="gate-only fine-tuning on one new task")
    tr.add_argument("--task", required=True, help="task section name to transfer to")
    tr.add_argument("--from", dest="src", default=None, help="source checkpoint")
    tr.add_argument("--overwrite", action="store_true",
                    help="replace an existing memory snapshot for this label")
    ev = sub.add_parser("evaluate", parents=[common],
                        help="rollout metrics and similarity matrix CSVs")
    ev.add_argument("--task", default=None, help="restrict to one task")
    ev.add_argument("--from", dest="src", default=None, help="checkpoint to evaluate")
    sub.add_parser("ablate-experts", parents=[common],
                   help="rerun foundation+transfer over an expert-count list")
    return p


_COMMANDS = {
    "generate": cmd_generate,
    "train-foundation": cmd_train_foundation,
    "transfer": cmd_transfer,
    "evaluate": cmd_evaluate,
    "ablate-experts": cmd_ablate_experts,
}


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
        if args.seed is None:
            args.seed = int(os.environ.get("WAVEOP_SEED", cfg.seed))
        if args.out is None:
            args.out = os.environ.get("WAVEOP_OUT") or None
        _COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"error=config message={exc}", file=sys.stderr)
        return 1
    except NumericsError as exc:
        print(f"error=numerics message={exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error=io message={exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
