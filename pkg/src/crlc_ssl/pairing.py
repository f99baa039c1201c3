"""Positive-pair construction: CRLC (channel split), CSC (adjacent segments), CAC (augmentations)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np

from .augment import AugmentSpec
from .errors import InvalidArgumentError, StrategyInapplicableError

Strategy = Literal["crlc", "csc", "cac"]
STRATEGIES = ("crlc", "csc", "cac")


@dataclass
class PairBatch:
    view1: list[np.ndarray]
    view2: list[np.ndarray]

    def __post_init__(self):
        if len(self.view1) != len(self.view2):
            raise InvalidArgumentError("views must hold the same number of windows")

    def __len__(self) -> int:
        return len(self.view1)


def crlc_split(C: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Random partition of ``range(C)`` into two channel sets, each of size >= 2."""
    if C < 4:
        raise StrategyInapplicableError(f"CRLC needs at least 4 channels, got {C}")
    c1 = int(rng.integers(2, C - 1))
    perm = rng.permutation(C)
    return np.sort(perm[:c1]), np.sort(perm[c1:])


def crlc_pair(w: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    w = np.asarray(w)
    first, second = crlc_split(w.shape[0], rng)
    return w[first], w[second]


def csc_pair(w: np.ndarray, paired: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray]:
    w = np.asarray(w)
    if paired is not None:
        paired = np.asarray(paired)
        if paired.shape[0] != w.shape[0]:
            raise InvalidArgumentError("adjacent window must have the same channels")
        return w, paired
    T = w.shape[-1]
    if T % 2:
        raise InvalidArgumentError(f"CSC halving needs an even window length, got T={T}")
    return w[:, : T // 2], w[:, T // 2 :]


def cac_pair(w: np.ndarray, spec: AugmentSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    return spec(w, rng), spec(w, rng)


def check_strategy(strategy: str, n_channels: int, n_samples: int, has_paired: bool) -> None:
    """Fail before training when a dataset cannot feed the strategy."""
    if strategy not in STRATEGIES:
        raise InvalidArgumentError(f"unknown strategy {strategy!r}")
    if strategy == "crlc" and n_channels < 4:
        raise StrategyInapplicableError(
            f"CRLC needs at least 4 channels so both views keep >= 2; dataset has {n_channels}"
        )
    if strategy == "csc" and not has_paired and n_samples % 2:
        raise InvalidArgumentError(
            f"CSC without adjacent windows splits each window in half; T={n_samples} is odd"
        )


def make_pair(
    strategy: Strategy,
    w: np.ndarray,
    rng: np.random.Generator,
    paired: Optional[np.ndarray] = None,
    augment: Optional[AugmentSpec] = None,
) -> tuple[np.ndarray, np.ndarray]:
    if strategy == "crlc":
        return crlc_pair(w, rng)
    if strategy == "csc":
        return csc_pair(w, paired)
    if strategy == "cac":
        return cac_pair(w, augment or AugmentSpec(), rng)
    raise InvalidArgumentError(f"unknown strategy {strategy!r}")


def build_pair_batch(
    strategy: Strategy,
    windows: Sequence[np.ndarray],
    rngs: Sequence[np.random.Generator],
    paired: Optional[Sequence[np.ndarray]] = None,
    augment: Optional[AugmentSpec] = None,
    executor=None,
) -> PairBatch:
    """Pair every window with its own rng stream; order is preserved even when run on ``executor``."""

    def one(i):
        return make_pair(strategy, windows[i], rngs[i], None if paired is None else paired[i], augment)

    indices = range(len(windows))
    pairs = list(executor.map(one, indices)) if executor is not None else [one(i) for i in indices]
    return PairBatch(view1=[a for a, _ in pairs], view2=[b for _, b in pairs])
