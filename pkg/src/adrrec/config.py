"""Training configuration: dataclasses, JSON loading with fail-closed validation."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .kernels import parse_mode
from .noisereg import LnsrConfig


@dataclass
class Seeds:
    init: int = 0
    shuffle: int = 0
    dropout: int = 0
    noise: int = 0
    negatives: int = 0


@dataclass
class TrainConfig:
    mode: str = "p-b-s-l-r-o"
    d_model: int = 64
    n_layers: int = 2
    d_ff: int = 256
    max_len: int = 50
    batch_size: int = 128
    epochs: int = 20
    lr: float = 1e-3
    optimizer: str = "adam"
    dropout: float = 0.2
    lam: float = 0.1
    noise_draws: int = 1
    lnsr: LnsrConfig = field(default_factory=LnsrConfig)
    seeds: Seeds = field(default_factory=Seeds)
    head_dim: int | None = None
    pos_kind: str = "learnable"
    tau: float = 3600.0
    freq_base: float = 10000.0
    time_units: list[str] = field(default_factory=lambda: ["year", "month", "weekday", "hour"])
    year_range: list[int] = field(default_factory=lambda: [1990, 2030])
    bochner_scale: float = 86400.0
    n_negatives: int | None = 100
    eval_ks: list[int] = field(default_factory=lambda: [5, 10])
    val_users: int | None = None
    eval_batch_size: int = 256
    min_count: int = 5
    dataset: str | None = None
    format: str | None = None
    dtype: str = "float32"

    def validate(self) -> "TrainConfig":
        try:
            parse_mode(self.mode)
        except ConfigError as exc:
            raise ConfigError(f"mode: {exc}") from None
        checks = [
            (0 <= self.lam <= 1, "lam must be in [0, 1]"),
            (self.lr > 0, "lr must be positive"),
            (self.d_model >= 1, "d_model must be >= 1"),
            (self.n_layers >= 1, "n_layers must be >= 1"),
            (self.d_ff >= 1, "d_ff must be >= 1"),
            (self.max_len >= 2, "max_len must be >= 2"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.epochs >= 0, "epochs must be >= 0"),
            (0 <= self.dropout < 1, "dropout must be in [0, 1)"),
            (self.noise_draws >= 1, "noise_draws must be >= 1"),
            (self.optimizer in ("adam", "sgd"), "optimizer must be adam or sgd"),
            (self.pos_kind in ("fixed", "learnable"), "pos_kind must be fixed or learnable"),
            (self.tau > 0, "tau must be positive"),
            (self.bochner_scale > 0, "bochner_scale must be positive"),
            (self.n_negatives is None or self.n_negatives >= 1, "n_negatives must be >= 1 or null"),
            (all(k >= 1 for k in self.eval_ks) and len(self.eval_ks) > 0, "eval_ks must be positive"),
            (self.min_count >= 1, "min_count must be >= 1"),
            (self.dtype in ("float32", "float64"), "dtype must be float32 or float64"),
            (len(self.year_range) == 2 and self.year_range[0] <= self.year_range[1], "bad year_range"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        try:
            self.lnsr.validate(self.n_layers)
        except ConfigError as exc:
            raise ConfigError(f"lnsr: {exc}") from None
        for name in ("init", "shuffle", "dropout", "noise", "negatives"):
            if not isinstance(getattr(self.seeds, name), int):
                raise ConfigError(f"seeds.{name} must be an integer")
        return self

    def with_seed(self, seed: int) -> "TrainConfig":
        """Copy with init/shuffle/dropout/noise seeds set to ``seed``; negatives stay fixed."""
        seeds = dataclasses.replace(self.seeds, init=seed, shuffle=seed, dropout=seed, noise=seed)
        return dataclasses.replace(self, seeds=seeds)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes).validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_NESTED = {"lnsr": LnsrConfig, "seeds": Seeds}


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or '<root>'}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"unknown key(s): {', '.join(where + k for k in unknown)}")
    kwargs = {}
    for key, value in data.items():
        if cls is TrainConfig and key in _NESTED:
            value = _build(_NESTED[key], value, key)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path or '<root>'}: {exc}") from None


def config_from_dict(data: dict) -> TrainConfig:
    cfg = _build(TrainConfig, data, "")
    try:
        return cfg.validate()
    except TypeError as exc:
        raise ConfigError(f"invalid value type: {exc}") from None


def load_config(path: str | Path) -> TrainConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return config_from_dict(data)


def write_config(cfg: TrainConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
