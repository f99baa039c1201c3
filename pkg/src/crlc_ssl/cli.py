"""Command-line interface: ``crlc-ssl {simulate,pretrain,finetune,inspect}``.

Every command is deterministic given its flags. Output files are written to a
temporary file and renamed into place, so a failing command never leaves a
partial file behind. Errors print one line to stderr and exit with status 2.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .checkpoint import load_checkpoint, load_into, module_tensors, save_checkpoint
from .config import FINETUNE_LR_GRID, RunConfig
from .data import Dataset, _atomic_write, read_dataset, write_dataset
from .experiment import train_val_indices
from .mpnn import ChannelAgnosticEncoder
from .pairing import check_strategy
from .simulate import FinetuneSpec, SimSpec, generate_finetune, generate_pretrain
from .trainer import attach_probe_and_finetune, embed, evaluate, grid_search_lr, pretrain


SIM_MODES = {
    "pretrain-drift": ("full", "drift", False),
    "pretrain-stationary": ("block_diagonal", "stationary", False),
    "finetune-full": ("full", "drift", True),
    "finetune-block": ("block_diagonal", "drift", True),
}

METRICS_HEADER = ("run_id", "stage", "strategy", "loss", "K", "seed", "n_per_class",
                  "lr", "split", "balanced_accuracy", "epochs_ran")

# flag name -> RunConfig field
PRETRAIN_FLAGS = {
    "strategy": "strategy", "loss": "loss", "k": "K", "epochs": "epochs", "lr": "learning_rate",
    "weight_decay": "weight_decay", "batch": "batch_size", "dropout": "dropout", "tau": "tau",
    "seed": "seed", "augment": "augment_family", "sample_rate": "sample_rate",
}


class CommandError(Exception):
    pass


def _write_text(path, text: str) -> None:
    _atomic_write(path, lambda fh: fh.write(text.encode("utf-8")))


# ---------------------------------------------------------------- simulate

def cmd_simulate(args) -> None:
    mixing, regime, labeled = SIM_MODES[args.mode]
    base = SimSpec(C=args.c, M=args.m, T=args.t, sigma=args.sigma, mixing_structure=mixing,
                   frequency_regime=regime, n_windows=args.n, seed=args.seed)
    ds = generate_finetune(FinetuneSpec(base=base)) if labeled else generate_pretrain(base)
    write_dataset(ds, args.out)
    print(f"wrote {args.out}: n={len(ds)} C={ds.n_channels} T={ds.n_samples} mode={args.mode} seed={args.seed}")


# ---------------------------------------------------------------- pretrain

def pretrain_config(args) -> RunConfig:
    base = RunConfig.biosignal() if args.profile == "biosignal" else RunConfig.synthetic()
    if args.config:
        base = RunConfig.from_file(args.config, base)
    overrides = {field: getattr(args, flag) for flag, field in PRETRAIN_FLAGS.items()
                 if getattr(args, flag) is not None}
    return base.replace(**overrides)


def cmd_pretrain(args) -> None:
    cfg = pretrain_config(args)
    ds = read_dataset(args.data)
    check_strategy(cfg.strategy, ds.n_channels, ds.n_samples, ds.paired is not None)
    val = read_dataset(args.val) if args.val else None
    lines = []

    def on_epoch(epoch, train_loss, val_loss):
        line = f"epoch {epoch + 1} train_loss {train_loss:.6f}"
        if val_loss is not None:
            line += f" val_loss {val_loss:.6f}"
        lines.append(line)
        print(line, file=sys.stderr, flush=True)

    model, history = pretrain(cfg, ds, val, on_epoch=on_epoch)
    save_checkpoint(args.out, module_tensors(model), cfg.to_text())
    log_path = Path(args.log) if args.log else Path(str(args.out) + ".log")
    previous = log_path.read_text(encoding="utf-8") if log_path.exists() else ""
    _write_text(log_path, previous + f"# {args.out} seed={cfg.seed} steps={history.steps}\n"
                + "".join(line + "\n" for line in lines))
    print(f"wrote {args.out}: {history.steps} steps, final train loss {history.train_loss[-1]:.4f}, seed {cfg.seed}")


# ---------------------------------------------------------------- finetune

def load_backbone(path) -> tuple[ChannelAgnosticEncoder, RunConfig]:
    """Backbone and config from a pretraining checkpoint (with or without the projector)."""
    ckpt = load_checkpoint(path)
    cfg = RunConfig.from_text(ckpt.config_text) if ckpt.config_text.strip() else RunConfig()
    backbone = ChannelAgnosticEncoder(K=cfg.K, dropout=cfg.dropout)
    prefix = "backbone." if any(name.startswith("backbone.") for name in ckpt.tensors) else ""
    load_into(backbone, {k: v for k, v in ckpt.tensors.items() if k.startswith(prefix)
                         and not k.startswith("projector.")}, prefix)
    return backbone, cfg


def split_off_test(ds: Dataset, test_size: int) -> tuple[Dataset, Dataset]:
    if not 0 < test_size < len(ds):
        raise CommandError(f"--test-size must lie in (0, {len(ds)}), got {test_size}")
    n = len(ds)
    return ds.subset(np.arange(n - test_size)), ds.subset(np.arange(n - test_size, n))


def _parse_seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise CommandError(f"--seeds must be comma-separated integers, got {text!r}") from exc
    if not seeds:
        raise CommandError("--seeds is empty")
    return seeds


def append_metrics(path, rows: Sequence[dict]) -> None:
    path = Path(path)
    if path.exists():
        existing = path.read_text(encoding="utf-8")
        header = existing.splitlines()[0] if existing else ""
        if existing and header != ",".join(METRICS_HEADER):
            raise CommandError(f"{path} has an unexpected header: {header!r}")
    else:
        existing = ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=METRICS_HEADER, lineterminator="\n")
    if not existing:
        writer.writeheader()
    writer.writerows(rows)
    _write_text(path, existing + buf.getvalue())


def mean_sem(values: Sequence[float]) -> tuple[float, float]:
    a = np.asarray(values, dtype=np.float64)
    sem = float(a.std(ddof=1) / math.sqrt(len(a))) if len(a) > 1 else 0.0
    return float(a.mean()), sem


def cmd_finetune(args) -> None:
    backbone, ckpt_cfg = load_backbone(args.ckpt)
    overrides = {k: v for k, v in dict(finetune_max_epochs=args.max_epochs, patience=args.patience,
                                       finetune_batch_size=args.batch).items() if v is not None}
    cfg = ckpt_cfg.replace(**overrides)
    data = read_dataset(args.data)
    if data.labels is None:
        raise CommandError(f"{args.data} has no labels")
    if args.test:
        pool, test = data, read_dataset(args.test)
    else:
        pool, test = split_off_test(data, args.test_size)
    seeds = _parse_seeds(args.seeds)
    pool_features = embed(backbone, pool.windows) if args.freeze else None
    test_features = embed(backbone, test.windows) if args.freeze else None
    run_stem = Path(args.ckpt).stem
    rows, accs = [], []
    for seed in seeds:
        # validation gets as many windows per class as training
        train_idx, val_idx = train_val_indices(pool, args.n_per_class, args.n_per_class, seed)
        train, val = pool.subset(train_idx), pool.subset(val_idx)
        if args.grid:
            result = grid_search_lr(backbone, cfg, train, val, args.freeze, FINETUNE_LR_GRID, seed).best
        else:
            kwargs = {}
            if args.freeze:
                kwargs = dict(train_features=pool_features[train_idx], val_features=pool_features[val_idx])
            result = attach_probe_and_finetune(backbone, cfg, train, val, args.freeze, args.lr, seed, **kwargs)
        metrics = evaluate(result.backbone, result.head, test, test_features)
        accs.append(metrics.balanced_accuracy)
        rows.append(dict(run_id=f"{run_stem}-s{seed}", stage="finetune" if not args.freeze else "probe",
                         strategy=cfg.strategy, loss=cfg.loss, K=cfg.K, seed=seed,
                         n_per_class=args.n_per_class, lr=result.metrics.best_lr, split="test",
                         balanced_accuracy=f"{metrics.balanced_accuracy:.6f}",
                         epochs_ran=result.metrics.epochs_ran))
        print(f"seed {seed}: lr {result.metrics.best_lr:g}, epochs {result.metrics.epochs_ran}, "
              f"test balanced accuracy {metrics.balanced_accuracy:.4f}")
        if args.head_out:
            head_path = Path(args.head_out)
            if len(seeds) > 1:
                head_path = head_path.with_name(f"{head_path.stem}-s{seed}{head_path.suffix}")
            save_checkpoint(head_path, module_tensors(result.head, "head."), cfg.to_text())
    append_metrics(args.metrics, rows)
    mean, sem = mean_sem(accs)
    print(f"balanced accuracy {mean:.4f} ({sem:.4f}) over {len(seeds)} seeds")


# ---------------------------------------------------------------- inspect

def cmd_inspect(args) -> None:
    ckpt = load_checkpoint(args.ckpt)
    width = max((len(n) for n in ckpt.tensors), default=4)
    for name, arr in ckpt.tensors.items():
        print(f"{name:<{width}}  {'x'.join(map(str, arr.shape)) or 'scalar'}")
    print(f"tensors: {len(ckpt.tensors)}")
    print(f"parameters: {ckpt.n_parameters}")
    print("config:")
    for line in ckpt.config_text.splitlines():
        print(f"  {line}")


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crlc-ssl", description="Channel-agnostic contrastive pretraining for multivariate time series.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset file")
    p.add_argument("--mode", required=True, choices=sorted(SIM_MODES))
    p.add_argument("--n", type=int, required=True, help="number of windows")
    p.add_argument("--c", type=int, default=10, help="output channels")
    p.add_argument("--m", type=int, default=10, help="latent sources")
    p.add_argument("--t", type=int, default=3000, help="window length")
    p.add_argument("--sigma", type=float, default=0.5, help="noise standard deviation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("pretrain", help="contrastive pretraining; writes a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--val", help="optional validation dataset; its loss is logged per epoch")
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--profile", choices=["synthetic", "biosignal"], default="synthetic",
                   help="default hyperparameters before the config file and flags apply")
    p.add_argument("--strategy", choices=["crlc", "csc", "cac"])
    p.add_argument("--loss", choices=["nt_xent", "ts2vec"])
    p.add_argument("--k", type=int, help="message-passing rounds")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--augment", choices=["eeg", "ecg"])
    p.add_argument("--sample-rate", type=float)
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="per-epoch loss log (default: <out>.log)")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="train a classifier head; appends metrics rows")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="labeled dataset")
    p.add_argument("--n-per-class", type=int, required=True)
    p.add_argument("--freeze", action="store_true", help="keep the encoder fixed (linear probe)")
    p.add_argument("--seeds", default="1,2,3,4,5")
    p.add_argument("--grid", action="store_true", help="grid-search the learning rate")
    p.add_argument("--lr", type=float, default=1e-3, help="learning rate when not grid searching")
    test = p.add_mutually_exclusive_group()
    test.add_argument("--test-size", type=int, default=1000,
                      help="the last N instances of --data form the fixed test split")
    test.add_argument("--test", help="separate labeled test dataset")
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--metrics", default="metrics.csv")
    p.add_argument("--head-out", help="also save the classifier head checkpoint")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("inspect", help="summarize a checkpoint")
    p.add_argument("ckpt")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except (CommandError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
