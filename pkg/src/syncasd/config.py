"""Config files (TOML or JSON) and the flat run configuration the CLI works from."""

from __future__ import annotations

import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    """Malformed config file, unknown key or invalid value."""


def read_config_file(path) -> dict:
    """Parse ``path`` as TOML (``.toml``) or JSON (anything else)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    try:
        if path.suffix.lower() == ".toml":
            data = tomllib.loads(text)
        else:
            data = json.loads(text)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a table/object")
    return data


@dataclass
class RunConfig:
    """Union of generator, training and evaluation settings plus paths.

    Field names match :class:`~syncasd.synthgen.SynthConfig` and
    :class:`~syncasd.training.TrainConfig` so one file can drive every
    command.  ``seed`` is shared.
    """

    # generator
    counts: dict | None = None
    T_min: int = 24
    T_max: int = 64
    Hv: int = 16
    Wv: int = 16
    Ha: int = 13
    sigma_v: float = 0.05
    sigma_a: float = 0.05
    smoothness: int = 3
    # training
    beta: float = 1.0
    frames_per_batch: int = 2500
    epochs: int = 30
    lr: float = 1e-3
    contrastive_on: bool = True
    pe_cross: bool = True
    pe_self: bool = True
    head: str = "sync"
    d: int = 32
    checkpoint_every: int = 0
    # evaluation
    kind: str = "mismatch"
    proportion: float = 0.5
    proportions: list = field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])
    min_shift_ms: float = 130.0
    skip_short: bool = False
    anchor: int = 0
    tpr_threshold: float = 0.5
    mask_fraction: float = 0.3
    # shared
    seed: int | None = None
    jobs: int = 1
    # paths
    corpus: str | None = None
    unsync: str | None = None
    model: str | None = None
    out: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        data = read_config_file(path) if path is not None else {}
        data.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def synth_dict(self) -> dict:
        from .synthgen import SynthConfig

        keys = {f.name for f in fields(SynthConfig)}
        d = {k: v for k, v in self.to_dict().items() if k in keys}
        if d.get("counts") is None:
            d.pop("counts", None)
        return d

    def train_dict(self) -> dict:
        from .training import TrainConfig

        keys = {f.name for f in fields(TrainConfig)}
        return {k: v for k, v in self.to_dict().items() if k in keys}
