"""Run configuration and its ``key = value`` text form."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from .errors import InvalidArgumentError

FINETUNE_LR_GRID = (5e-3, 1e-3, 5e-4, 1e-4, 5e-5)


@dataclass
class RunConfig:
    # pretraining
    strategy: str = "crlc"
    loss: str = "nt_xent"
    K: int = 3
    epochs: int = 50
    learning_rate: float = 1e-4
    weight_decay: float = 1e-2
    batch_size: int = 32
    dropout: float = 0.1
    tau: float = 0.1
    seed: int = 0
    augment_family: str = "eeg"
    sample_rate: float = 100.0
    # fine-tuning
    finetune_lr: float = 1e-3
    finetune_weight_decay: float = 1e-2
    finetune_batch_size: int = 32
    finetune_max_epochs: int = 100
    patience: int = 10

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.strategy not in ("crlc", "csc", "cac"):
            raise InvalidArgumentError(f"unknown strategy {self.strategy!r}")
        if self.loss not in ("nt_xent", "ts2vec"):
            raise InvalidArgumentError(f"unknown loss {self.loss!r}")
        if self.augment_family not in ("eeg", "ecg"):
            raise InvalidArgumentError(f"unknown augmentation family {self.augment_family!r}")
        if self.K < 0:
            raise InvalidArgumentError("K must be >= 0")
        for name in ("epochs", "batch_size", "finetune_batch_size", "finetune_max_epochs", "patience"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be >= 1")
        for name in ("learning_rate", "tau", "sample_rate", "finetune_lr"):
            if getattr(self, name) <= 0:
                raise InvalidArgumentError(f"{name} must be > 0")
        if self.weight_decay < 0 or self.finetune_weight_decay < 0:
            raise InvalidArgumentError("weight decay must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidArgumentError("dropout must lie in [0, 1)")

    @classmethod
    def synthetic(cls, **overrides) -> "RunConfig":
        return cls(**{"epochs": 50, "learning_rate": 1e-4, "batch_size": 32, **overrides})

    @classmethod
    def biosignal(cls, **overrides) -> "RunConfig":
        return cls(**{"epochs": 20, "learning_rate": 1e-3, "weight_decay": 1e-2,
                      "batch_size": 64, "dropout": 0.1, **overrides})

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))

    @classmethod
    def from_mapping(cls, values: dict, base: Optional["RunConfig"] = None) -> "RunConfig":
        base = base or cls()
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise InvalidArgumentError(f"unknown config key {key!r}")
            current = getattr(base, key)
            kwargs[key] = _coerce(key, raw, type(current))
        return base.replace(**kwargs)

    @classmethod
    def from_text(cls, text: str, base: Optional["RunConfig"] = None) -> "RunConfig":
        return cls.from_mapping(parse_config_text(text), base)

    @classmethod
    def from_file(cls, path, base: Optional["RunConfig"] = None) -> "RunConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), base)


def _coerce(key, raw, kind):
    if not isinstance(raw, str):
        return kind(raw)
    try:
        if kind is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if kind is int:
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        return kind(raw.strip())
    except ValueError as exc:
        raise InvalidArgumentError(f"config key {key!r}: cannot parse {raw!r} as {kind.__name__}") from exc


def parse_config_text(text: str) -> dict[str, str]:
    """``key = value`` per line; ``#`` starts a comment; blank lines ignored."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgumentError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise InvalidArgumentError(f"config line {lineno}: empty key")
        out[key] = value
    return out
