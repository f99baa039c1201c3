"""Windows, datasets, and the ``.mvts`` binary dataset format.

A window is a ``(C, T)`` float array. A :class:`Dataset` holds ``n`` windows of
identical shape, optionally with one label per window and one temporally
adjacent "paired" window per entry.
"""
from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import FormatError, InsufficientDataError, InvalidArgumentError

MAGIC = b"MVTS"
VERSION = 1
FLAG_LABELS = 0x1
FLAG_PAIRED = 0x2
_HEADER = struct.Struct("<4sHHIIII")

MIN_CHANNELS = 2
MIN_LENGTH = 96


def check_window(w: np.ndarray, min_channels: int = MIN_CHANNELS, min_length: int = MIN_LENGTH) -> np.ndarray:
    w = np.asarray(w)
    if w.ndim != 2:
        raise InvalidArgumentError(f"window must be 2-D (C, T), got shape {w.shape}")
    c, t = w.shape
    if c < min_channels:
        raise InvalidArgumentError(f"window has {c} channels, need at least {min_channels}")
    if t < min_length:
        raise InvalidArgumentError(f"window has {t} samples, need at least {min_length}")
    if not np.all(np.isfinite(w)):
        raise InvalidArgumentError("window contains non-finite values")
    return w


@dataclass(frozen=True)
class Dataset:
    windows: np.ndarray                    # (n, C, T)
    labels: Optional[np.ndarray] = None    # (n,)
    paired: Optional[np.ndarray] = None    # (n, C, T), window following windows[i] in time
    n_classes: Optional[int] = None

    def __post_init__(self):
        windows = np.asarray(self.windows)
        if windows.ndim != 3:
            raise InvalidArgumentError(f"windows must be (n, C, T), got {windows.shape}")
        n = windows.shape[0]
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (n,):
                raise InvalidArgumentError(f"expected {n} labels, got shape {labels.shape}")
            n_classes = self.n_classes
            if n_classes is None:
                n_classes = int(labels.max()) + 1 if n else 0
            if n and (labels.min() < 0 or labels.max() >= n_classes):
                raise InvalidArgumentError(f"labels must lie in [0, {n_classes})")
            object.__setattr__(self, "labels", labels)
            object.__setattr__(self, "n_classes", int(n_classes))
        if self.paired is not None:
            paired = np.asarray(self.paired)
            if paired.shape != windows.shape:
                raise InvalidArgumentError(
                    f"paired windows shape {paired.shape} != windows shape {windows.shape}"
                )
            object.__setattr__(self, "paired", paired)
        object.__setattr__(self, "windows", windows)
        for arr in (self.windows, self.labels, self.paired):
            if arr is not None and arr.flags.owndata:
                arr.flags.writeable = False

    def __len__(self) -> int:
        return self.windows.shape[0]

    @property
    def n_channels(self) -> int:
        return self.windows.shape[1]

    @property
    def n_samples(self) -> int:
        return self.windows.shape[2]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            windows=self.windows[idx],
            labels=None if self.labels is None else self.labels[idx],
            paired=None if self.paired is None else self.paired[idx],
            n_classes=self.n_classes,
        )


def standardize(w: np.ndarray) -> np.ndarray:
    """Per-channel zero mean / unit population std. Constant channels become zeros."""
    w = np.asarray(w)
    dtype = w.dtype if np.issubdtype(w.dtype, np.floating) else np.float64
    x = w.astype(np.float64)
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    std = np.sqrt((centered**2).mean(axis=-1, keepdims=True))
    # tiny relative threshold catches channels that are constant up to rounding
    scale = np.maximum(np.abs(mean), 1.0)
    flat = std <= 1e-12 * scale
    out = np.where(flat, 0.0, centered / np.where(flat, 1.0, std))
    return out.astype(dtype)


def segment(series: np.ndarray, window_len: int, emit_pairs: bool = False) -> Dataset:
    """Cut a ``(C, T_total)`` recording into non-overlapping windows; the tail is dropped."""
    series = np.asarray(series)
    if series.ndim != 2:
        raise InvalidArgumentError(f"series must be (C, T_total), got {series.shape}")
    total = series.shape[1]
    if window_len <= 0 or window_len > total:
        raise InvalidArgumentError(f"window_len must be in [1, {total}], got {window_len}")
    n = total // window_len
    c = series.shape[0]
    windows = series[:, : n * window_len].reshape(c, n, window_len).transpose(1, 0, 2).copy()
    if not emit_pairs:
        return Dataset(windows=windows)
    return Dataset(windows=windows[:-1].copy(), paired=windows[1:].copy())


def balanced_indices(ds: Dataset, n_per_class: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices of ``n_per_class`` instances per class drawn without replacement, and of the rest."""
    if ds.labels is None:
        raise InvalidArgumentError("balanced sampling needs a labeled dataset")
    rng = np.random.default_rng(seed)
    picked = []
    for label in range(ds.n_classes):
        pool = np.flatnonzero(ds.labels == label)
        if len(pool) < n_per_class:
            raise InsufficientDataError(label, len(pool), n_per_class)
        picked.append(rng.choice(pool, size=n_per_class, replace=False))
    idx = np.sort(np.concatenate(picked)) if picked else np.zeros(0, dtype=np.int64)
    mask = np.ones(len(ds), dtype=bool)
    mask[idx] = False
    return idx, np.flatnonzero(mask)


def split_balanced(ds: Dataset, n_per_class: int, seed: int) -> tuple[Dataset, Dataset]:
    """Draw ``n_per_class`` instances of every class without replacement.

    Returns ``(drawn, remaining)``; drawing a validation set from ``remaining``
    guarantees no overlap with the first draw.
    """
    idx, rest = balanced_indices(ds, n_per_class, seed)
    return ds.subset(idx), ds.subset(rest)


def sample_balanced(ds: Dataset, n_per_class: int, seed: int) -> Dataset:
    return split_balanced(ds, n_per_class, seed)[0]


def _atomic_write(path, payload_writer) -> None:
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            payload_writer(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_dataset(ds: Dataset, path) -> None:
    n, c, t = ds.windows.shape
    flags = (FLAG_LABELS if ds.labels is not None else 0) | (FLAG_PAIRED if ds.paired is not None else 0)
    n_classes = ds.n_classes if ds.labels is not None else 0

    def write(fh):
        fh.write(_HEADER.pack(MAGIC, VERSION, flags, n, c, t, n_classes))
        fh.write(np.ascontiguousarray(ds.windows, dtype="<f4").tobytes())
        if ds.paired is not None:
            fh.write(np.ascontiguousarray(ds.paired, dtype="<f4").tobytes())
        if ds.labels is not None:
            fh.write(np.ascontiguousarray(ds.labels, dtype="<u4").tobytes())

    _atomic_write(path, write)


def read_dataset(path) -> Dataset:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise FormatError(f"file too short for header ({len(buf)} bytes)", len(buf))
    magic, version, flags, n, c, t, n_classes = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    offset = _HEADER.size

    def take(dtype, count, what):
        nonlocal offset
        nbytes = count * np.dtype(dtype).itemsize
        if offset + nbytes > len(buf):
            raise FormatError(
                f"truncated {what}: need {nbytes} bytes, {len(buf) - offset} remain", len(buf)
            )
        arr = np.frombuffer(buf, dtype=dtype, count=count, offset=offset)
        offset += nbytes
        return arr

    windows = take("<f4", n * c * t, "primary payload").reshape(n, c, t).astype(np.float32)
    paired = None
    if flags & FLAG_PAIRED:
        paired = take("<f4", n * c * t, "paired payload").reshape(n, c, t).astype(np.float32)
    labels = None
    if flags & FLAG_LABELS:
        labels = take("<u4", n, "labels").astype(np.int64)
    if offset != len(buf):
        raise FormatError(f"{len(buf) - offset} trailing bytes after payload", offset)
    return Dataset(
        windows=windows,
        labels=labels,
        paired=paired,
        n_classes=n_classes if labels is not None else None,
    )
