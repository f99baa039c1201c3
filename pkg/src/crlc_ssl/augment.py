"""Stochastic EEG and ECG augmentation pipelines used for CAC positive pairs.

Each pipeline is split into ``sample_*_params`` (draws every random quantity)
and ``apply_*`` (deterministic given the parameters), so a pipeline can be
replayed or forced to neutral parameters.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
from scipy import signal

from .errors import InvalidArgumentError

EEG_MAX_SHIFT = 38
EEG_MAX_MASK = 112
BANDSTOP_WIDTH_HZ = 5.0
WANDER_FREQ_HZ = (0.05, 0.5)
N_WANDER = 3


def bandstop(x: np.ndarray, center_hz: float, width_hz: float, sample_rate: float) -> np.ndarray:
    """Zero-phase Butterworth band-reject along the last axis."""
    lo = center_hz - width_hz / 2
    hi = center_hz + width_hz / 2
    nyquist = sample_rate / 2
    if not (0 < lo and hi < nyquist):
        raise InvalidArgumentError(
            f"stop band [{lo:.3f}, {hi:.3f}] Hz must lie inside (0, {nyquist}) Hz"
        )
    sos = signal.butter(4, [lo, hi], btype="bandstop", fs=sample_rate, output="sos")
    x = np.asarray(x, dtype=np.float64)
    return signal.sosfiltfilt(sos, x, axis=-1)


@dataclass
class EegParams:
    scale: float = 1.0
    shift: int = 0
    dc: float = 0.0
    mask_len: int = 0
    mask_start: int = 0
    noise_std: float = 0.0
    noise: Optional[np.ndarray] = None
    stop_center: Optional[float] = None  # None bypasses the bandstop


def sample_eeg_params(shape, rng: np.random.Generator) -> EegParams:
    _, T = shape
    noise_std = rng.uniform(0.01, 0.2)
    return EegParams(
        scale=rng.uniform(0.5, 2.0),
        shift=int(rng.integers(-EEG_MAX_SHIFT, EEG_MAX_SHIFT + 1)),
        dc=rng.uniform(-10.0, 10.0),
        mask_len=int(rng.integers(0, EEG_MAX_MASK + 1)),
        mask_start=int(rng.integers(0, T)),
        noise_std=noise_std,
        noise=rng.normal(0.0, noise_std, size=shape),
        stop_center=rng.uniform(2.8, 41.3),
    )


def zero_mask(x: np.ndarray, start: int, length: int) -> np.ndarray:
    """Zero ``length`` samples from ``start`` on every channel, wrapping past the end."""
    if length <= 0:
        return x
    T = x.shape[-1]
    idx = (start + np.arange(min(length, T))) % T
    out = x.copy()
    out[..., idx] = 0.0
    return out


def apply_eeg(w: np.ndarray, p: EegParams, sample_rate: float = 100.0) -> np.ndarray:
    x = np.asarray(w)
    if x.shape[-1] <= 2 * EEG_MAX_SHIFT:
        raise InvalidArgumentError(f"window too short for EEG time shift (T={x.shape[-1]})")
    if p.scale != 1.0:
        x = x * p.scale
    if p.shift:
        x = np.roll(x, p.shift, axis=-1)
    if p.dc != 0.0:
        x = x + p.dc
    x = zero_mask(x, p.mask_start, p.mask_len)
    if p.noise is not None and p.noise_std > 0:
        x = x + p.noise
    if p.stop_center is not None:
        x = bandstop(x, p.stop_center, BANDSTOP_WIDTH_HZ, sample_rate)
    return x


def eeg_augment(w: np.ndarray, rng: np.random.Generator, sample_rate: float = 100.0) -> np.ndarray:
    w = np.asarray(w)
    return apply_eeg(w, sample_eeg_params(w.shape, rng), sample_rate).astype(w.dtype, copy=False)


@dataclass
class EcgParams:
    lead_mask: Optional[np.ndarray] = None     # bool per channel, True = zeroed
    powerline_hz: float = 50.0
    powerline_phase: float = 0.0
    powerline_amp: float = 0.0
    noise_std: float = 0.0
    noise: Optional[np.ndarray] = None
    shift_start: int = 0
    shift_len: int = 0
    shift_offsets: Optional[np.ndarray] = None  # per channel, +-b
    wander_freqs: Optional[np.ndarray] = None   # (N_WANDER,) Hz
    wander_phases: Optional[np.ndarray] = None
    wander_amps: Optional[np.ndarray] = None
    wander_channel_gain: Optional[np.ndarray] = None  # (C,), scales the shared wander per channel


def sample_ecg_params(shape, rng: np.random.Generator) -> EcgParams:
    C, T = shape
    noise_std = rng.uniform(0.01, 0.5)
    b = rng.uniform(0.0, 0.25)
    signs = np.where(rng.random(C) < 0.5, -1.0, 1.0)
    shift_len = int(round(0.2 * T))
    return EcgParams(
        lead_mask=rng.random(C) < 0.5,
        powerline_hz=50.0 if rng.random() < 0.5 else 60.0,
        powerline_phase=rng.uniform(0.0, 2 * np.pi),
        powerline_amp=rng.uniform(0.0, 0.5),
        noise_std=noise_std,
        noise=rng.normal(0.0, noise_std, size=shape),
        shift_start=int(rng.integers(0, T - shift_len + 1)),
        shift_len=shift_len,
        shift_offsets=signs * b,
        wander_freqs=rng.uniform(*WANDER_FREQ_HZ, size=N_WANDER),
        wander_phases=rng.uniform(0.0, 2 * np.pi, size=N_WANDER),
        wander_amps=rng.uniform(0.0, 0.5, size=N_WANDER),
        wander_channel_gain=rng.normal(1.0, 0.5, size=C),
    )


def apply_ecg(w: np.ndarray, p: EcgParams, sample_rate: float = 500.0) -> np.ndarray:
    x = np.asarray(w)
    C, T = x.shape
    t = np.arange(T) / sample_rate
    if p.lead_mask is not None and p.lead_mask.any():
        x = x.copy()
        x[p.lead_mask] = 0.0
    if p.powerline_amp != 0.0:
        x = x + p.powerline_amp * np.sin(2 * np.pi * p.powerline_hz * t + p.powerline_phase)
    if p.noise is not None and p.noise_std > 0:
        x = x + p.noise
    if p.shift_offsets is not None and p.shift_len > 0 and np.any(p.shift_offsets != 0):
        x = x.copy()
        x[:, p.shift_start : p.shift_start + p.shift_len] += p.shift_offsets[:, None]
    if p.wander_freqs is not None and np.any(p.wander_amps != 0):
        cosines = p.wander_amps[:, None] * np.cos(
            2 * np.pi * p.wander_freqs[:, None] * t[None, :] + p.wander_phases[:, None]
        )
        x = x + p.wander_channel_gain[:, None] * cosines.sum(axis=0)
    return x


def ecg_augment(w: np.ndarray, rng: np.random.Generator, sample_rate: float = 500.0) -> np.ndarray:
    w = np.asarray(w)
    return apply_ecg(w, sample_ecg_params(w.shape, rng), sample_rate).astype(w.dtype, copy=False)


@dataclass(frozen=True)
class AugmentSpec:
    family: Literal["eeg", "ecg"] = "eeg"
    sample_rate: float = 100.0

    def __post_init__(self):
        if self.family not in ("eeg", "ecg"):
            raise InvalidArgumentError(f"unknown augmentation family {self.family!r}")
        if self.sample_rate <= 0:
            raise InvalidArgumentError("sample_rate must be > 0")
        if self.family == "eeg":
            # widest possible stop band must still fit below Nyquist
            if 41.3 + BANDSTOP_WIDTH_HZ / 2 >= self.sample_rate / 2:
                raise InvalidArgumentError(
                    f"sample rate {self.sample_rate} Hz too low for the EEG bandstop range"
                )

    def __call__(self, w: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.family == "eeg":
            return eeg_augment(w, rng, self.sample_rate)
        return ecg_augment(w, rng, self.sample_rate)
