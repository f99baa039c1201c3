"""Channel aggregation by message passing, and the full channel-agnostic encoder.

Channel embeddings form a fully connected graph. Each round ``k`` updates
every node additively with the mean of messages from all other nodes,
``h <- h + 1/(C-1) * sum_{h' != h} M_k([h, h'])``, where ``M_k`` is
Linear(128 -> 64) -> Dropout -> ReLU applied independently at each time step.
The readout averages the final node states and applies a two-layer network.

Variable channel counts inside one batch are handled by zero-padding to the
largest ``C`` and carrying a node mask.
"""
from __future__ import annotations

from typing import Sequence, Union

import numpy as np
import torch
from torch import nn

from .encoder import EMBED_DIM, ConvEncoder, Projector, output_length
from .errors import InvalidArgumentError


class MessageNet(nn.Module):
    def __init__(self, dim: int = EMBED_DIM, dropout: float = 0.1):
        super().__init__()
        self.linear = nn.Linear(2 * dim, dim)
        self.dropout = nn.Dropout(dropout)
        self.act = nn.ReLU()

    def forward(self, h: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """One synchronous round on ``h`` of shape ``(B, C, T, L)``; ``mask`` is ``(B, C)`` bool."""
        dim = h.shape[-1]
        w_self, w_other = self.linear.weight[:, :dim], self.linear.weight[:, dim:]
        # linear([h_i, h_j]) = W_self h_i + W_other h_j + b, evaluated for all (i, j)
        from_self = h @ w_self.T + self.linear.bias
        from_other = h @ w_other.T
        pre = from_self[:, :, None] + from_other[:, None, :]  # (B, C_i, C_j, T, L)
        msg = self.act(self.dropout(pre))
        C = h.shape[1]
        eye = torch.eye(C, dtype=torch.bool, device=h.device)
        valid = mask[:, None, :] & ~eye[None]  # sender j valid and j != i
        msg = msg * valid[..., None, None].to(msg.dtype)
        counts = mask.sum(dim=1).to(h.dtype)
        m = msg.sum(dim=2) / (counts - 1).clamp(min=1)[:, None, None, None]
        return h + m * mask[..., None, None].to(h.dtype)


class Readout(nn.Module):
    def __init__(self, dim: int = EMBED_DIM, dropout: float = 0.1):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(dim, dim),
            nn.Dropout(dropout),
            nn.ReLU(),
            nn.Linear(dim, dim),
        )

    def forward(self, h: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """Mean over valid nodes, then the readout net: ``(B, C, T, L) -> (B, T, L)``."""
        weights = mask.to(h.dtype)
        mean = (h * weights[..., None, None]).sum(dim=1) / weights.sum(dim=1)[:, None, None]
        return self.net(mean)


class MPNN(nn.Module):
    def __init__(self, K: int = 3, dim: int = EMBED_DIM, dropout: float = 0.1):
        super().__init__()
        if K < 0:
            raise InvalidArgumentError(f"K must be >= 0, got {K}")
        self.K = K
        self.rounds = nn.ModuleList(MessageNet(dim, dropout) for _ in range(K))
        self.readout = Readout(dim, dropout)

    def forward(self, h: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """``h``: ``(B, C, L, T)`` node embeddings; returns ``(B, L, T)``."""
        if self.K and int(mask.sum(dim=1).min()) < 2:
            raise InvalidArgumentError("message passing needs at least 2 channels per window")
        h = h.transpose(2, 3)  # (B, C, T, L): shared weights across time
        for message in self.rounds:
            h = message(h, mask)
        return self.readout(h, mask).transpose(1, 2)


WindowBatch = Union[torch.Tensor, np.ndarray, Sequence[Union[torch.Tensor, np.ndarray]]]


def _to_tensor(w, dtype) -> torch.Tensor:
    if isinstance(w, torch.Tensor):
        return w.to(dtype)
    # copy: dataset arrays are read-only
    return torch.from_numpy(np.array(w, dtype=np.float64 if dtype == torch.float64 else np.float32))


def _as_channel_list(windows: WindowBatch, dtype) -> list[torch.Tensor]:
    if isinstance(windows, (torch.Tensor, np.ndarray)):
        windows = _to_tensor(windows, dtype)
        if windows.dim() == 2:
            windows = windows.unsqueeze(0)
        return list(windows)
    return [_to_tensor(w, dtype) for w in windows]


class ChannelAgnosticEncoder(nn.Module):
    """Full encoder: per-channel ``ConvEncoder`` followed by ``MPNN``.

    Accepts a ``(B, C, T)`` tensor or a list of ``(C_i, T)`` windows whose
    channel counts may differ. Returns ``(B, 64, T_out)``.
    """

    def __init__(self, K: int = 3, dropout: float = 0.1):
        super().__init__()
        self.encoder = ConvEncoder(dropout)
        self.mpnn = MPNN(K, EMBED_DIM, dropout)

    @property
    def K(self) -> int:
        return self.mpnn.K

    def forward(self, windows: WindowBatch) -> torch.Tensor:
        dtype = next(self.parameters()).dtype
        chans = _as_channel_list(windows, dtype)
        lengths = {w.shape[-1] for w in chans}
        if len(lengths) != 1:
            raise InvalidArgumentError(f"all windows in a batch must share T, got {sorted(lengths)}")
        counts = [w.shape[0] for w in chans]
        if min(counts) < 1:
            raise InvalidArgumentError("window with zero channels")
        flat = torch.cat(chans, dim=0).unsqueeze(1)  # (sum C, 1, T)
        emb = self.encoder(flat)  # (sum C, L, T_out)
        B, c_max = len(chans), max(counts)
        if all(c == c_max for c in counts):
            h = emb.view(B, c_max, *emb.shape[1:])
            mask = torch.ones(B, c_max, dtype=torch.bool, device=emb.device)
        else:
            h = emb.new_zeros(B, c_max, *emb.shape[1:])
            mask = torch.zeros(B, c_max, dtype=torch.bool, device=emb.device)
            start = 0
            for b, c in enumerate(counts):
                h[b, :c] = emb[start : start + c]
                mask[b, :c] = True
                start += c
        return self.mpnn(h, mask)

    def encode_window(self, X, training: bool = False) -> torch.Tensor:
        """Single ``(C, T)`` window to a ``(64, T_out)`` representation."""
        was_training = self.training
        self.train(training)
        try:
            return self([X])[0]
        finally:
            self.train(was_training)

    def output_length(self, t_in: int) -> int:
        return output_length(t_in)


class SSLModel(nn.Module):
    """Everything trained during pretraining: the full encoder plus the projector."""

    def __init__(self, K: int = 3, dropout: float = 0.1):
        super().__init__()
        self.backbone = ChannelAgnosticEncoder(K, dropout)
        self.projector = Projector()

    def forward(self, windows: WindowBatch) -> torch.Tensor:
        return self.backbone(windows)

    def project(self, z: torch.Tensor) -> torch.Tensor:
        """Mean-pool ``(B, 64, T_out)`` over time and project to ``(B, 32)``."""
        return self.projector(z.mean(dim=-1))
