"""Synthetic multichannel data: sinusoidal sources under linear mixing.

Each window is ``X = A @ S + noise`` with ``S[m, t] = sin(f_m * t)``. Two
pretraining regimes are provided:

* ``drift`` (full mixing): every channel sees every source, but the source
  frequencies are redrawn for the adjacent window. Channel subsets share
  content; neighbouring windows do not.
* ``stationary`` (block-diagonal mixing): two channel groups driven by
  disjoint source groups, with frequencies held fixed across the adjacent
  window. Neighbouring windows share content; channel subsets need not.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .data import Dataset
from .errors import InvalidArgumentError

FREQ_LO = 0.01 * math.pi
FREQ_HI = 0.2 * math.pi
CLASS_FREQS = (0.05 * math.pi, 0.15 * math.pi)

MixingStructure = Literal["full", "block_diagonal"]
FrequencyRegime = Literal["drift", "stationary"]


@dataclass(frozen=True)
class SimSpec:
    C: int = 10
    M: int = 10
    T: int = 3000
    sigma: float = 0.5
    mixing_structure: MixingStructure = "full"
    frequency_regime: FrequencyRegime = "drift"
    n_windows: int = 10_000
    seed: int = 0
    freq_range: tuple[float, float] = (FREQ_LO, FREQ_HI)

    def __post_init__(self):
        if self.C < 1 or self.M < 1 or self.T < 1:
            raise InvalidArgumentError("C, M and T must be positive")
        if self.sigma <= 0:
            raise InvalidArgumentError(f"sigma must be > 0, got {self.sigma}")
        if self.mixing_structure not in ("full", "block_diagonal"):
            raise InvalidArgumentError(f"unknown mixing structure {self.mixing_structure!r}")
        if self.frequency_regime not in ("drift", "stationary"):
            raise InvalidArgumentError(f"unknown frequency regime {self.frequency_regime!r}")
        if self.mixing_structure == "block_diagonal" and (self.C % 2 or self.M % 2):
            raise InvalidArgumentError("block-diagonal mixing needs even C and M")
        lo, hi = self.freq_range
        if not 0 < lo < hi:
            raise InvalidArgumentError(f"frequency range must satisfy 0 < lo < hi, got {self.freq_range}")
        if self.n_windows < 0:
            raise InvalidArgumentError("n_windows must be >= 0")


@dataclass(frozen=True)
class FinetuneSpec:
    base: SimSpec = field(default_factory=SimSpec)
    class_freqs: tuple[float, float] = CLASS_FREQS
    class_source_index: int = -1  # -1: last source
    class_prior: float = 0.5

    def __post_init__(self):
        if self.class_freqs[0] == self.class_freqs[1]:
            raise InvalidArgumentError("class frequencies must differ")
        if min(self.class_freqs) <= 0:
            raise InvalidArgumentError("class frequencies must be positive")
        if not -self.base.M <= self.class_source_index < self.base.M:
            raise InvalidArgumentError(f"class_source_index {self.class_source_index} out of range")
        if not 0.0 <= self.class_prior <= 1.0:
            raise InvalidArgumentError("class_prior must lie in [0, 1]")

    @property
    def source_index(self) -> int:
        return self.class_source_index % self.base.M


def instance_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for instance ``index``; lets instances be generated in any order."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def sample_sources(freqs, T: int, t0: int = 0) -> np.ndarray:
    freqs = np.asarray(freqs, dtype=np.float64)
    if np.any(freqs <= 0):
        raise InvalidArgumentError("source frequencies must be positive")
    t = np.arange(t0, t0 + T, dtype=np.float64)
    return np.sin(freqs[:, None] * t[None, :])


def sample_mixing(C: int, M: int, structure: MixingStructure, rng: np.random.Generator) -> np.ndarray:
    """Uniform(0, 1) entries; every column normalised to sum to one."""
    if structure == "block_diagonal" and (C % 2 or M % 2):
        raise InvalidArgumentError("block-diagonal mixing needs even C and M")
    mask = np.ones((C, M), dtype=bool)
    if structure == "block_diagonal":
        mask[: C // 2, M // 2 :] = False
        mask[C // 2 :, : M // 2] = False
    elif structure != "full":
        raise InvalidArgumentError(f"unknown mixing structure {structure!r}")
    A = np.where(mask, rng.uniform(0.0, 1.0, size=(C, M)), 0.0)
    for m in range(M):
        while A[:, m].sum() <= 1e-12:
            A[:, m] = np.where(mask[:, m], rng.uniform(0.0, 1.0, size=C), 0.0)
    return A / A.sum(axis=0, keepdims=True)


def mix(A: np.ndarray, S: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    if A.shape[1] != S.shape[0]:
        raise InvalidArgumentError(f"mixing {A.shape} incompatible with sources {S.shape}")
    X = A @ S
    if sigma > 0:
        X = X + rng.normal(0.0, sigma, size=X.shape)
    return X


def _draw_freqs(rng, M, freq_range):
    return rng.uniform(freq_range[0], freq_range[1], size=M)


def generate_pretrain(spec: SimSpec) -> Dataset:
    """Unlabeled windows, each with its adjacent window in ``paired``.

    The pair shares one mixing matrix; time runs on from ``T`` to ``2T - 1``
    in the adjacent window. Frequencies are held under ``stationary`` and
    redrawn under ``drift``.
    """
    windows = np.empty((spec.n_windows, spec.C, spec.T), dtype=np.float32)
    paired = np.empty_like(windows)
    for i in range(spec.n_windows):
        rng = instance_rng(spec.seed, i)
        A = sample_mixing(spec.C, spec.M, spec.mixing_structure, rng)
        f = _draw_freqs(rng, spec.M, spec.freq_range)
        f_next = f if spec.frequency_regime == "stationary" else _draw_freqs(rng, spec.M, spec.freq_range)
        windows[i] = mix(A, sample_sources(f, spec.T), spec.sigma, rng)
        paired[i] = mix(A, sample_sources(f_next, spec.T, t0=spec.T), spec.sigma, rng)
    return Dataset(windows=windows, paired=paired)


def pretrain_frequencies(spec: SimSpec, index: int) -> tuple[np.ndarray, np.ndarray]:
    """Replay the frequency draws of instance ``index`` (same stream order as ``generate_pretrain``)."""
    rng = instance_rng(spec.seed, index)
    sample_mixing(spec.C, spec.M, spec.mixing_structure, rng)
    f = _draw_freqs(rng, spec.M, spec.freq_range)
    f_next = f if spec.frequency_regime == "stationary" else _draw_freqs(rng, spec.M, spec.freq_range)
    return f, f_next


def finetune_mixing(spec: FinetuneSpec) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(spec.base.seed, spawn_key=(2**32 - 1,)))
    return sample_mixing(spec.base.C, spec.base.M, spec.base.mixing_structure, rng)


def generate_finetune(spec: FinetuneSpec) -> Dataset:
    """Labeled windows; the class sets the frequency of one designated source.

    A single mixing matrix is drawn per dataset and shared by all instances.
    """
    base = spec.base
    A = finetune_mixing(spec)
    k = spec.source_index
    windows = np.empty((base.n_windows, base.C, base.T), dtype=np.float32)
    labels = np.empty(base.n_windows, dtype=np.int64)
    for i in range(base.n_windows):
        rng = instance_rng(base.seed, i)
        label = int(rng.random() < spec.class_prior)
        f = _draw_freqs(rng, base.M, base.freq_range)
        f[k] = spec.class_freqs[label]
        labels[i] = label
        windows[i] = mix(A, sample_sources(f, base.T), base.sigma, rng)
    return Dataset(windows=windows, labels=labels, n_classes=2)
