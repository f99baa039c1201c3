"""Contrastive pretraining, linear-probe fine-tuning, and evaluation."""
from __future__ import annotations

import copy
import logging
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .augment import AugmentSpec
from .config import FINETUNE_LR_GRID, RunConfig
from .data import Dataset
from .encoder import EMBED_DIM, output_length
from .errors import InputTooShortError, InvalidArgumentError
from .losses import contrastive_loss
from .mpnn import ChannelAgnosticEncoder, SSLModel
from .pairing import build_pair_batch, check_strategy

log = logging.getLogger(__name__)

POOLED_LENGTH = 4
EVAL_BATCH = 64


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def make_optimizer(params, lr: float, weight_decay: float) -> torch.optim.AdamW:
    return torch.optim.AdamW(params, lr=lr, betas=(0.9, 0.999), eps=1e-8,
                             weight_decay=weight_decay, foreach=False)


def optimizer_step(opt: torch.optim.Optimizer) -> None:
    """Step with zero gradients filled in, so weight decay also reaches parameters the loss ignores."""
    for group in opt.param_groups:
        for p in group["params"]:
            if p.grad is None:
                p.grad = torch.zeros_like(p)
    opt.step()


def _worker_pool() -> Optional[ThreadPoolExecutor]:
    n = int(os.environ.get("CRLC_SSL_THREADS", "1") or 1)
    return ThreadPoolExecutor(max_workers=n) if n > 1 else None


@dataclass
class PretrainLog:
    steps: int = 0
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    step_loss: list[float] = field(default_factory=list)


def _pair_views(cfg: RunConfig, ds: Dataset, idx: np.ndarray, key: tuple[int, ...], pool):
    rngs = [_stream(cfg.seed, *key, int(i)) for i in idx]
    windows = [ds.windows[i] for i in idx]
    paired = None
    if cfg.strategy == "csc" and ds.paired is not None:
        paired = [ds.paired[i] for i in idx]
    augment = AugmentSpec(cfg.augment_family, cfg.sample_rate) if cfg.strategy == "cac" else None
    return build_pair_batch(cfg.strategy, windows, rngs, paired, augment, executor=pool)


def _batch_loss(model: SSLModel, cfg: RunConfig, batch) -> torch.Tensor:
    n = len(batch)
    z = model(batch.view1 + batch.view2)  # both views share one encoder pass
    loss = contrastive_loss(cfg.loss, z[:n], z[n:], model.projector, cfg.tau)
    if not torch.isfinite(loss):
        raise FloatingPointError(f"non-finite contrastive loss {loss.item()}")
    return loss


def pretrain(
    cfg: RunConfig,
    ds: Dataset,
    val: Optional[Dataset] = None,
    model: Optional[SSLModel] = None,
    on_epoch: Optional[Callable[[int, float, Optional[float]], None]] = None,
) -> tuple[SSLModel, PretrainLog]:
    """Contrastive pretraining of the full encoder and projector with AdamW.

    Batch order and every pairing/augmentation draw derive from
    ``(seed, epoch, instance)``, and torch's generator is seeded once, so two
    runs with the same config produce bit-identical parameters.
    """
    check_strategy(cfg.strategy, ds.n_channels, ds.n_samples, ds.paired is not None)
    if cfg.loss == "nt_xent" and min(cfg.batch_size, len(ds)) < 2:
        raise InvalidArgumentError("NT-Xent needs batches of at least 2 instances")
    torch.manual_seed(cfg.seed)
    if model is None:
        model = SSLModel(K=cfg.K, dropout=cfg.dropout)
    opt = make_optimizer(model.parameters(), cfg.learning_rate, cfg.weight_decay)
    history = PretrainLog()
    pool = _worker_pool()
    try:
        for epoch in range(cfg.epochs):
            model.train()
            order = _stream(cfg.seed, 0, epoch).permutation(len(ds))
            losses = []
            for start in range(0, len(ds), cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                if cfg.loss == "nt_xent" and len(idx) < 2:
                    continue
                batch = _pair_views(cfg, ds, idx, (1, epoch), pool)
                loss = _batch_loss(model, cfg, batch)
                opt.zero_grad(set_to_none=False)
                loss.backward()
                optimizer_step(opt)
                history.steps += 1
                losses.append(loss.item())
                history.step_loss.append(loss.item())
            history.train_loss.append(float(np.mean(losses)) if losses else math.nan)
            val_loss = validation_loss(model, cfg, val, pool) if val is not None and len(val) else None
            if val_loss is not None:
                history.val_loss.append(val_loss)
            log.info("epoch %d train %.4f val %s", epoch + 1, history.train_loss[-1], val_loss)
            if on_epoch is not None:
                on_epoch(epoch, history.train_loss[-1], val_loss)
    finally:
        if pool is not None:
            pool.shutdown()
    return model, history


@torch.no_grad()
def validation_loss(model: SSLModel, cfg: RunConfig, val: Dataset, pool=None) -> float:
    """Mean contrastive loss over ``val`` with dropout off and fixed pairing draws."""
    was_training = model.training
    model.eval()
    total, count = 0.0, 0
    for start in range(0, len(val), cfg.batch_size):
        idx = np.arange(start, min(start + cfg.batch_size, len(val)))
        if cfg.loss == "nt_xent" and len(idx) < 2:
            continue
        batch = _pair_views(cfg, val, idx, (2,), pool)
        total += _batch_loss(model, cfg, batch).item() * len(idx)
        count += len(idx)
    model.train(was_training)
    return total / count if count else math.nan


def segment_bounds(t: int, n: int = POOLED_LENGTH) -> list[int]:
    """Boundaries ``round(j * t / n)`` (halves round up) for ``j = 0..n``."""
    return [int(math.floor(j * t / n + 0.5)) for j in range(n + 1)]


def pool_segments(z: torch.Tensor, n: int = POOLED_LENGTH) -> torch.Tensor:
    """Average ``(B, L, T)`` over ``n`` contiguous time segments: ``(B, L, n)``."""
    t = z.shape[-1]
    if t < n:
        raise InputTooShortError(f"representation length {t} is shorter than the probe's {n} segments")
    b = segment_bounds(t, n)
    return torch.stack([z[..., b[j] : b[j + 1]].mean(dim=-1) for j in range(n)], dim=-1)


class ClassifierHead(nn.Module):
    """Segment-average to 4 steps, flatten to 256, linear map to class logits."""

    def __init__(self, n_classes: int, dim: int = EMBED_DIM):
        super().__init__()
        self.linear = nn.Linear(dim * POOLED_LENGTH, n_classes)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.from_pooled(pool_segments(z))

    def from_pooled(self, pooled: torch.Tensor) -> torch.Tensor:
        return self.linear(pooled.flatten(1))


@dataclass
class Metrics:
    balanced_accuracy: float
    recalls: list[float]
    epochs_ran: int = 0
    best_lr: Optional[float] = None
    seed: Optional[int] = None


def balanced_accuracy(y_true, y_pred, n_classes: int) -> tuple[float, list[float]]:
    """Mean recall over the classes present in ``y_true``; absent classes are reported as NaN."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    recalls = []
    for c in range(n_classes):
        sel = y_true == c
        if not sel.any():
            warnings.warn(f"class {c} absent from evaluation set; excluded from balanced accuracy")
            recalls.append(math.nan)
            continue
        recalls.append(float(np.mean(y_pred[sel] == c)))
    present = [r for r in recalls if not math.isnan(r)]
    if not present:
        raise InvalidArgumentError("evaluation set is empty")
    return float(np.mean(present)), recalls


@torch.no_grad()
def embed(backbone: ChannelAgnosticEncoder, windows: np.ndarray, batch: int = EVAL_BATCH) -> torch.Tensor:
    """Inference-mode pooled features ``(n, 64, 4)``."""
    was_training = backbone.training
    backbone.eval()
    out = [pool_segments(backbone(windows[s : s + batch])) for s in range(0, len(windows), batch)]
    backbone.train(was_training)
    return torch.cat(out) if out else torch.zeros(0, EMBED_DIM, POOLED_LENGTH)


@torch.no_grad()
def predict(backbone: ChannelAgnosticEncoder, head: ClassifierHead, windows: np.ndarray,
            features: Optional[torch.Tensor] = None) -> np.ndarray:
    was_training = head.training
    head.eval()
    if features is None:
        features = embed(backbone, windows)
    preds = head.from_pooled(features).argmax(dim=1).numpy()
    head.train(was_training)
    return preds


@dataclass
class FinetuneResult:
    head: ClassifierHead
    backbone: ChannelAgnosticEncoder
    metrics: Metrics
    val_history: list[float]


def attach_probe_and_finetune(
    backbone: ChannelAgnosticEncoder,
    cfg: RunConfig,
    train: Dataset,
    val: Dataset,
    freeze_encoder: bool = True,
    lr: Optional[float] = None,
    seed: Optional[int] = None,
    train_features: Optional[torch.Tensor] = None,
    val_features: Optional[torch.Tensor] = None,
) -> FinetuneResult:
    """Train a linear classifier on top of ``backbone`` with early stopping.

    Frozen mode never modifies ``backbone`` and runs it with dropout off, so
    its pooled features are computed once (or passed in precomputed). Full
    mode trains a deep copy. The returned state is the epoch with the best
    validation balanced accuracy (patience ``cfg.patience``).
    """
    if train.labels is None or val.labels is None:
        raise InvalidArgumentError("fine-tuning needs labeled train and validation sets")
    lr = cfg.finetune_lr if lr is None else lr
    seed = cfg.seed if seed is None else seed
    n_classes = max(train.n_classes, val.n_classes)
    if output_length(train.n_samples) < POOLED_LENGTH:
        raise InputTooShortError(
            f"window length {train.n_samples} gives fewer than {POOLED_LENGTH} encoder steps for the probe"
        )

    torch.manual_seed(seed)
    head = ClassifierHead(n_classes).to(next(backbone.parameters()).dtype)
    if freeze_encoder:
        model = backbone
        if train_features is None:
            train_features = embed(backbone, train.windows)
        if val_features is None:
            val_features = embed(backbone, val.windows)
        params = list(head.parameters())
    else:
        model = copy.deepcopy(backbone)
        params = list(model.parameters()) + list(head.parameters())
    opt = make_optimizer(params, lr, cfg.finetune_weight_decay)
    y_train = torch.tensor(train.labels, dtype=torch.long)

    def val_score():
        preds = predict(model, head, val.windows, val_features if freeze_encoder else None)
        return balanced_accuracy(val.labels, preds, n_classes)[0]

    best_score, best_epoch = -1.0, 0
    best_state = (copy.deepcopy(head.state_dict()), None if freeze_encoder else copy.deepcopy(model.state_dict()))
    history = []
    epochs_ran = 0
    for epoch in range(cfg.finetune_max_epochs):
        order = _stream(seed, 3, epoch).permutation(len(train))
        head.train()
        if not freeze_encoder:
            model.train()
        for start in range(0, len(train), cfg.finetune_batch_size):
            idx = order[start : start + cfg.finetune_batch_size]
            if freeze_encoder:
                logits = head.from_pooled(train_features[idx])
            else:
                logits = head(model(train.windows[idx]))
            loss = F.cross_entropy(logits, y_train[idx])
            opt.zero_grad(set_to_none=False)
            loss.backward()
            optimizer_step(opt)
        epochs_ran = epoch + 1
        score = val_score()
        history.append(score)
        if score > best_score:
            best_score, best_epoch = score, epoch
            best_state = (copy.deepcopy(head.state_dict()),
                          None if freeze_encoder else copy.deepcopy(model.state_dict()))
        elif epoch - best_epoch >= cfg.patience:
            break
    head.load_state_dict(best_state[0])
    if not freeze_encoder:
        model.load_state_dict(best_state[1])
    head.eval()
    model.eval()
    preds = predict(model, head, val.windows, val_features if freeze_encoder else None)
    score, recalls = balanced_accuracy(val.labels, preds, n_classes)
    metrics = Metrics(balanced_accuracy=score, recalls=recalls, epochs_ran=epochs_ran, best_lr=lr, seed=seed)
    return FinetuneResult(head=head, backbone=model, metrics=metrics, val_history=history)


@dataclass
class GridSearchResult:
    best_lr: float
    best: FinetuneResult
    runs: dict[float, FinetuneResult]


def grid_search_lr(
    backbone: ChannelAgnosticEncoder,
    cfg: RunConfig,
    train: Dataset,
    val: Dataset,
    freeze_encoder: bool = True,
    grid: Sequence[float] = FINETUNE_LR_GRID,
    seed: Optional[int] = None,
) -> GridSearchResult:
    """One fine-tuning run per learning rate from the same initial state; ties go to the smaller rate."""
    if not grid:
        raise InvalidArgumentError("learning-rate grid is empty")
    train_features = val_features = None
    if freeze_encoder:
        train_features = embed(backbone, train.windows)
        val_features = embed(backbone, val.windows)
    runs = {}
    for lr in sorted(set(grid)):
        runs[lr] = attach_probe_and_finetune(backbone, cfg, train, val, freeze_encoder, lr, seed,
                                             train_features, val_features)
        log.info("lr %g: val balanced accuracy %.4f", lr, runs[lr].metrics.balanced_accuracy)
    best_lr = None
    for lr in sorted(runs):
        if best_lr is None or runs[lr].metrics.balanced_accuracy > runs[best_lr].metrics.balanced_accuracy:
            best_lr = lr
    return GridSearchResult(best_lr=best_lr, best=runs[best_lr], runs=runs)


def evaluate(backbone: ChannelAgnosticEncoder, head: ClassifierHead, test: Dataset,
             features: Optional[torch.Tensor] = None) -> Metrics:
    if test.labels is None:
        raise InvalidArgumentError("evaluation needs a labeled dataset")
    preds = predict(backbone, head, test.windows, features)
    n_classes = max(test.n_classes, head.linear.out_features)
    score, recalls = balanced_accuracy(test.labels, preds, n_classes)
    return Metrics(balanced_accuracy=score, recalls=recalls)
