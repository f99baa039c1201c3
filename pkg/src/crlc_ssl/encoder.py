"""Per-channel strided convolutional encoder and the contrastive projector."""
from __future__ import annotations

import math

import torch
from torch import nn

from .errors import InputTooShortError, InvalidArgumentError

# (in_channels, out_channels, kernel == stride, group-norm groups)
BLOCKS = (
    (1, 256, 3, 16),
    (256, 256, 2, 16),
    (256, 256, 2, 16),
    (256, 256, 2, 16),
    (256, 256, 2, 16),
    (256, 64, 2, 8),
)
EMBED_DIM = 64
PROJ_DIM = 32
MIN_INPUT_LENGTH = math.prod(k for _, _, k, _ in BLOCKS)  # 96


def output_length(t_in: int) -> int:
    if t_in < 1:
        raise InvalidArgumentError(f"input length must be >= 1, got {t_in}")
    t = t_in
    for _, _, k, _ in BLOCKS:
        t //= k
    if t == 0:
        raise InputTooShortError(
            f"input length {t_in} is shorter than the encoder's total stride {MIN_INPUT_LENGTH}"
        )
    return t


def _uniform_fan_in_(layer: nn.Module) -> None:
    fan_in = layer.weight[0].numel()
    bound = 1.0 / math.sqrt(fan_in)
    nn.init.uniform_(layer.weight, -bound, bound)
    if layer.bias is not None:
        nn.init.uniform_(layer.bias, -bound, bound)


class TimestepGroupNorm(nn.Module):
    """Group normalization with statistics taken per time step.

    Channels are split into ``groups``; at every time step each group is
    shifted to mean 0 and scaled to unit (biased) variance, then a per-channel
    affine map is applied. Statistics never mix time steps, so the encoder
    stays translation-covariant at the granularity of its total stride.
    """

    def __init__(self, groups: int, channels: int, eps: float = 1e-5):
        super().__init__()
        if channels % groups:
            raise InvalidArgumentError(f"{channels} channels do not split into {groups} groups")
        self.num_groups = groups
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n, c, t = x.shape
        g = x.view(n, self.num_groups, c // self.num_groups, t)
        mean = g.mean(dim=2, keepdim=True)
        var = g.var(dim=2, unbiased=False, keepdim=True)
        normed = ((g - mean) / torch.sqrt(var + self.eps)).view(n, c, t)
        return normed * self.weight[:, None] + self.bias[:, None]


class ConvBlock(nn.Module):
    def __init__(self, c_in, c_out, kernel, groups, dropout):
        super().__init__()
        self.conv = nn.Conv1d(c_in, c_out, kernel_size=kernel, stride=kernel)
        self.dropout = nn.Dropout(dropout)
        self.norm = TimestepGroupNorm(groups, c_out)
        self.act = nn.GELU()
        _uniform_fan_in_(self.conv)

    def forward(self, x):
        return self.act(self.norm(self.dropout(self.conv(x))))


class ConvEncoder(nn.Module):
    """Maps each single-channel signal ``(N, 1, T_in)`` to ``(N, 64, T_out)``.

    Convolutions are unpadded with stride equal to kernel width, so
    ``T_out = output_length(T_in)``.
    """

    def __init__(self, dropout: float = 0.1):
        super().__init__()
        if not 0.0 <= dropout < 1.0:
            raise InvalidArgumentError(f"dropout must lie in [0, 1), got {dropout}")
        self.blocks = nn.ModuleList(ConvBlock(*spec, dropout=dropout) for spec in BLOCKS)
        self.out = nn.Conv1d(EMBED_DIM, EMBED_DIM, kernel_size=1)
        _uniform_fan_in_(self.out)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 2:
            x = x.unsqueeze(1)
        if x.dim() != 3 or x.shape[1] != 1:
            raise InvalidArgumentError(f"expected (N, 1, T) input, got {tuple(x.shape)}")
        output_length(x.shape[-1])
        for block in self.blocks:
            x = block(x)
        return self.out(x)


class Projector(nn.Module):
    """Linear 64 -> 32 head used only by the NT-Xent objective."""

    def __init__(self, in_dim: int = EMBED_DIM, out_dim: int = PROJ_DIM):
        super().__init__()
        self.linear = nn.Linear(in_dim, out_dim)

    def forward(self, z):
        return self.linear(z)


def encode_channel(x, encoder: ConvEncoder, training: bool = False, generator_seed=None) -> torch.Tensor:
    """Encode one channel ``x`` of shape ``(T_in,)`` into a ``(64, T_out)`` embedding."""
    x = torch.as_tensor(x, dtype=next(encoder.parameters()).dtype)
    if x.dim() != 1:
        raise InvalidArgumentError(f"expected a 1-D channel, got shape {tuple(x.shape)}")
    was_training = encoder.training
    encoder.train(training)
    try:
        if generator_seed is not None:
            torch.manual_seed(generator_seed)
        return encoder(x.view(1, 1, -1))[0]
    finally:
        encoder.train(was_training)
