"""Contrastive objectives: NT-Xent on projected instance embeddings and the
hierarchical TS2Vec dual (temporal + instance) loss."""
from __future__ import annotations

import torch

from .errors import InvalidArgumentError


def _nt_xent_one_way(pw: torch.Tensor, pv: torch.Tensor, tau: float) -> torch.Tensor:
    """Mean over anchors i of ``-log exp(s(i,i,w,v)) / (sum_j exp s(i,j,w,v) + sum_{j!=i} exp s(i,j,w,w))``."""
    n = pw.shape[0]
    uw = pw / pw.norm(dim=1, keepdim=True)
    uv = pv / pv.norm(dim=1, keepdim=True)
    cross = uw @ uv.T / tau
    within = uw @ uw.T / tau
    eye = torch.eye(n, dtype=torch.bool, device=pw.device)
    within = within.masked_fill(eye, float("-inf"))
    logits = torch.cat([cross, within], dim=1)
    return (torch.logsumexp(logits, dim=1) - cross.diagonal()).mean()


def nt_xent(p1: torch.Tensor, p2: torch.Tensor, tau: float = 0.1) -> torch.Tensor:
    """Symmetric NT-Xent over ``(N, D)`` projections of the two views."""
    if tau <= 0:
        raise InvalidArgumentError(f"temperature must be > 0, got {tau}")
    if p1.shape != p2.shape or p1.dim() != 2:
        raise InvalidArgumentError(f"views must be matching (N, D) matrices, got {tuple(p1.shape)}, {tuple(p2.shape)}")
    if p1.shape[0] < 2:
        raise InvalidArgumentError("NT-Xent needs at least 2 instances for a negative")
    if bool((p1.norm(dim=1) == 0).any() or (p2.norm(dim=1) == 0).any()):
        raise InvalidArgumentError("zero-norm projection: cosine similarity undefined")
    return 0.5 * (_nt_xent_one_way(p1, p2, tau) + _nt_xent_one_way(p2, p1, tau))


def _contrast(anchor: torch.Tensor, other: torch.Tensor) -> torch.Tensor:
    """Per-anchor ``-log`` term along dim 1 of ``(G, K, D)`` groups.

    Within each group the positive of ``anchor[g, k]`` is ``other[g, k]``;
    negatives are all ``other[g, k']`` plus ``anchor[g, k']`` for ``k' != k``.
    """
    cross = anchor @ other.transpose(1, 2)
    within = anchor @ anchor.transpose(1, 2)
    k = anchor.shape[1]
    eye = torch.eye(k, dtype=torch.bool, device=anchor.device)
    within = within.masked_fill(eye, float("-inf"))
    logits = torch.cat([cross, within], dim=2)
    return torch.logsumexp(logits, dim=2) - cross.diagonal(dim1=1, dim2=2)


def ts2vec_dual(z1: torch.Tensor, z2: torch.Tensor) -> torch.Tensor:
    """Dual loss for view ordering (1, 2) on ``(N, T, D)`` sequences with raw dot products."""
    if z1.shape != z2.shape or z1.dim() != 3:
        raise InvalidArgumentError(f"views must be matching (N, T, D) tensors, got {tuple(z1.shape)}, {tuple(z2.shape)}")
    n, t, _ = z1.shape
    if n < 1 or t < 1:
        raise InvalidArgumentError("need N >= 1 and T >= 1")
    temporal = _contrast(z1, z2)  # groups = instances, contrast over time
    instance = _contrast(z1.transpose(0, 1), z2.transpose(0, 1))  # groups = time steps
    return (temporal.sum() + instance.sum()) / (2 * n * t)


def maxpool_time(z: torch.Tensor) -> torch.Tensor:
    """Kernel-2 stride-2 max-pool along dim 1; an odd final step passes through unchanged."""
    t = z.shape[1]
    pooled = torch.maximum(z[:, 0 : t - 1 : 2], z[:, 1:t:2])
    if t % 2:
        pooled = torch.cat([pooled, z[:, t - 1 :]], dim=1)
    return pooled


def hierarchy_levels(t: int) -> list[int]:
    levels = [t]
    while t > 1:
        t = (t + 1) // 2
        levels.append(t)
    return levels


def ts2vec_hierarchical_one_way(z1: torch.Tensor, z2: torch.Tensor) -> torch.Tensor:
    losses = [ts2vec_dual(z1, z2)]
    while z1.shape[1] > 1:
        z1, z2 = maxpool_time(z1), maxpool_time(z2)
        losses.append(ts2vec_dual(z1, z2))
    return torch.stack(losses).mean()


def ts2vec_hierarchical(z1: torch.Tensor, z2: torch.Tensor) -> torch.Tensor:
    """Hierarchical TS2Vec loss averaged over both view orderings."""
    return 0.5 * (ts2vec_hierarchical_one_way(z1, z2) + ts2vec_hierarchical_one_way(z2, z1))


def contrastive_loss(kind: str, z1: torch.Tensor, z2: torch.Tensor, projector=None, tau: float = 0.1) -> torch.Tensor:
    """Loss between two ``(N, 64, T_out)`` representation batches."""
    if kind == "nt_xent":
        if projector is None:
            raise InvalidArgumentError("NT-Xent needs a projector")
        return nt_xent(projector(z1.mean(dim=-1)), projector(z2.mean(dim=-1)), tau)
    if kind == "ts2vec":
        t1, t2 = z1.shape[-1], z2.shape[-1]
        if t1 != t2:
            raise InvalidArgumentError(f"TS2Vec needs equal-length views, got T_out {t1} and {t2}")
        return ts2vec_hierarchical(z1.transpose(1, 2), z2.transpose(1, 2))
    raise InvalidArgumentError(f"unknown loss {kind!r}")
