"""The synthetic pretraining-strategy experiment.

Pretraining data comes in two regimes (``drift``: full mixing, frequencies
redrawn between adjacent windows; ``stationary``: block-diagonal mixing,
frequencies held). Each regime is pretrained with CRLC and with CSC, and every
model is probed with a frozen encoder on labeled data generated with full or
block-diagonal mixing.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional

import numpy as np

from .config import RunConfig
from .data import Dataset, balanced_indices
from .simulate import FinetuneSpec, SimSpec, generate_finetune, generate_pretrain
from .trainer import attach_probe_and_finetune, embed, evaluate, pretrain

log = logging.getLogger(__name__)

REGIME_MIXING = {"drift": "full", "stationary": "block_diagonal"}
MATCHED_STRATEGY = {"drift": "crlc", "stationary": "csc"}


@dataclass
class ExperimentScale:
    n_pretrain: int = 2000
    n_pretrain_val: int = 0
    C: int = 10
    M: int = 10
    T: int = 3000
    sigma: float = 0.5
    pretrain_epochs: int = 20
    pretrain_lr: float = 1e-4
    batch_size: int = 32
    loss: str = "nt_xent"
    n_train_per_class: int = 1000
    n_val_per_class: int = 250
    n_test: int = 500
    probe_lr: float = 1e-3
    seeds: tuple[int, ...] = (1, 2, 3)
    pretrain_seed: int = 7
    data_seed: int = 11


@dataclass
class CellResult:
    regime: str
    strategy: str
    finetune_mixing: str
    accuracies: list[float]
    pretrain_seconds: float = 0.0
    train_loss: list[float] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def sem(self) -> float:
        a = np.asarray(self.accuracies)
        return float(a.std(ddof=1) / np.sqrt(len(a))) if len(a) > 1 else 0.0

    @property
    def matched(self) -> bool:
        return MATCHED_STRATEGY[self.regime] == self.strategy


def pretrain_dataset(scale: ExperimentScale, regime: str, n: int, seed: int) -> Dataset:
    return generate_pretrain(SimSpec(
        C=scale.C, M=scale.M, T=scale.T, sigma=scale.sigma,
        mixing_structure=REGIME_MIXING[regime], frequency_regime=regime,
        n_windows=n, seed=seed,
    ))


def finetune_dataset(scale: ExperimentScale, mixing: str) -> Dataset:
    # surplus so each class has enough instances for train + val after the test split
    per_class = scale.n_train_per_class + scale.n_val_per_class
    n = scale.n_test + int(2 * per_class * 1.2) + 200
    return generate_finetune(FinetuneSpec(base=SimSpec(
        C=scale.C, M=scale.M, T=scale.T, sigma=scale.sigma,
        mixing_structure=mixing, frequency_regime="drift",
        n_windows=n, seed=scale.data_seed + (0 if mixing == "full" else 1),
    )))


def split_test(ds: Dataset, n_test: int) -> tuple[Dataset, Dataset]:
    """Fixed test split: the last ``n_test`` instances. Returns ``(pool, test)``."""
    n = len(ds)
    return ds.subset(np.arange(n - n_test)), ds.subset(np.arange(n - n_test, n))


def probe_accuracies(backbone, cfg: RunConfig, ft: Dataset, scale: ExperimentScale) -> list[float]:
    """Frozen-encoder probe accuracy on the fixed test split, one value per seed."""
    pool, test = split_test(ft, scale.n_test)
    pool_features = embed(backbone, pool.windows)
    test_features = embed(backbone, test.windows)
    accs = []
    for seed in scale.seeds:
        train_idx, val_idx = train_val_indices(pool, scale.n_train_per_class, scale.n_val_per_class, seed)
        result = attach_probe_and_finetune(
            backbone, cfg, pool.subset(train_idx), pool.subset(val_idx), freeze_encoder=True,
            lr=scale.probe_lr, seed=seed,
            train_features=pool_features[train_idx], val_features=pool_features[val_idx],
        )
        accs.append(evaluate(backbone, result.head, test, test_features).balanced_accuracy)
    return accs


def train_val_indices(pool: Dataset, n_train: int, n_val: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Balanced train draw, then a disjoint balanced validation draw from what remains."""
    train_idx, rest_idx = balanced_indices(pool, n_train, seed)
    val_rel, _ = balanced_indices(pool.subset(rest_idx), n_val, seed + 10_000)
    return train_idx, rest_idx[val_rel]


def run_synthetic_experiment(
    scale: ExperimentScale = ExperimentScale(),
    cells: Iterable[tuple[str, str]] = (("drift", "crlc"), ("drift", "csc"),
                                        ("stationary", "crlc"), ("stationary", "csc")),
    finetune_mixings: Iterable[str] = ("block_diagonal", "full"),
    report=print,
) -> list[CellResult]:
    finetune_sets = {m: finetune_dataset(scale, m) for m in finetune_mixings}
    results = []
    for regime, strategy in cells:
        cfg = RunConfig.synthetic(
            strategy=strategy, loss=scale.loss, epochs=scale.pretrain_epochs,
            learning_rate=scale.pretrain_lr, batch_size=scale.batch_size,
            seed=scale.pretrain_seed, finetune_lr=scale.probe_lr,
        )
        data = pretrain_dataset(scale, regime, scale.n_pretrain, scale.data_seed + 100)
        val = (pretrain_dataset(scale, regime, scale.n_pretrain_val, scale.data_seed + 200)
               if scale.n_pretrain_val else None)
        start = time.time()
        model, history = pretrain(cfg, data, val, on_epoch=lambda e, tr, va: report(
            f"  [{regime}/{strategy}] epoch {e + 1}: train loss {tr:.4f}" + (f", val {va:.4f}" if va is not None else "")))
        elapsed = time.time() - start
        for mixing, ft in finetune_sets.items():
            accs = probe_accuracies(model.backbone, cfg, ft, scale)
            cell = CellResult(regime, strategy, mixing, accs, elapsed, history.train_loss)
            report(f"pretrain {regime:<10} strategy {strategy:<4} finetune {mixing:<14} "
                   f"balanced acc {cell.mean:.3f} ({cell.sem:.3f})")
            results.append(cell)
    return results


def summarize(results: list[CellResult]) -> dict:
    return {
        "cells": [dict(asdict(r), mean=r.mean, sem=r.sem, matched=r.matched) for r in results],
    }
