"""Training configuration and the flat key=value config file format."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path


@dataclass
class TrainConfig:
    lr: float = 3e-4
    momentum: float = 0.9
    epochs: int = 30
    batch_size: int = 64
    seed: int = 0
    multi_view: bool = False
    gripper: bool = False
    checkpoint_every: int = 10
    max_frames: int = 0  # 0 = use the whole dataset

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _coerce(kind, raw: str):
    if kind is bool:
        try:
            return _BOOL[raw.lower()]
        except KeyError:
            raise ValueError(f"not a boolean: {raw!r}") from None
    return kind(raw)


def read_config_file(path) -> dict:
    out: dict[str, str] = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config lines must be key=value, got {line!r}")
        k, _, v = line.partition("=")
        out[k.strip()] = v.strip()
    return out


def write_config_file(path, entries: dict) -> None:
    with open(path, "w") as f:
        for k, v in entries.items():
            if isinstance(v, bool):
                v = "true" if v else "false"
            f.write(f"{k}={v}\n")


def train_config_from(entries: dict) -> TrainConfig:
    """Build a TrainConfig from string key=value entries, type-checked."""
    kinds = {f.name: f.type for f in fields(TrainConfig)}
    types = {"lr": float, "momentum": float, "epochs": int, "batch_size": int,
             "seed": int, "multi_view": bool, "gripper": bool,
             "checkpoint_every": int, "max_frames": int}
    kwargs = {}
    for k, v in entries.items():
        if k not in kinds:
            raise ValueError(f"unknown training config key {k!r}")
        kwargs[k] = _coerce(types[k], v) if isinstance(v, str) else v
    return TrainConfig(**kwargs)
