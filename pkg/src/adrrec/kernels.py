"""Absolute embeddings and pairwise relative kernels feeding the mix-attention heads.

Every kernel comes in two forms: a plain function on tensors (easy to test in
isolation) and an ``nn.Module`` that owns the learnable parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import BoundsError, ConfigError

ABSOLUTE = ("p", "b", "t")
RELATIVE = ("s", "e", "l", "r")
NOISE = "o"
ALPHABET = ABSOLUTE + RELATIVE + (NOISE,)
# canonical order for rendering mode strings
_ORDER = {c: n for n, c in enumerate(("p", "b", "t", "s", "e", "l", "r", "o"))}


@dataclass(frozen=True)
class EmbeddingMode:
    absolute_kernels: tuple[str, ...]
    relative_kernels: tuple[str, ...]
    noise_enabled: bool

    @property
    def letters(self) -> tuple[str, ...]:
        return self.absolute_kernels + self.relative_kernels + ((NOISE,) if self.noise_enabled else ())

    @property
    def heads(self) -> tuple[str, ...]:
        """One attention head per kernel letter, in canonical order."""
        return tuple(sorted(self.absolute_kernels + self.relative_kernels, key=_ORDER.__getitem__))

    @property
    def n_heads(self) -> int:
        return len(self.absolute_kernels) + len(self.relative_kernels)

    def __str__(self) -> str:
        return "-".join(sorted(self.letters, key=_ORDER.__getitem__))


def parse_mode(mode: str) -> EmbeddingMode:
    """Parse a dash-separated mode string such as ``"p-b-s-l-r-o"`` (any letter order)."""
    letters = [c.strip() for c in str(mode).split("-") if c.strip()]
    unknown = [c for c in letters if c not in ALPHABET]
    if unknown:
        raise ConfigError(f"unknown mode letter(s) {unknown} in {mode!r}; alphabet is {''.join(ALPHABET)}")
    if len(set(letters)) != len(letters):
        raise ConfigError(f"duplicate letter in mode {mode!r}")
    key = _ORDER.__getitem__
    absolute = tuple(sorted((c for c in letters if c in ABSOLUTE), key=key))
    relative = tuple(sorted((c for c in letters if c in RELATIVE), key=key))
    if not absolute and not relative:
        raise ConfigError(f"mode {mode!r} has no kernel letter")
    return EmbeddingMode(absolute, relative, NOISE in letters)


# ---------------------------------------------------------------- absolute

def sinusoid_table(n: int, d: int, base: float = 10000.0, dtype=torch.float32) -> torch.Tensor:
    """Interleaved transformer table: column 2i is sin, 2i+1 is cos of ``p / base**(2i/d)``."""
    pos = torch.arange(n, dtype=torch.float64)[:, None]
    i = torch.arange(0, d, 2, dtype=torch.float64)
    angle = pos / base ** (i / d)
    table = torch.zeros(n, d, dtype=torch.float64)
    table[:, 0::2] = torch.sin(angle)
    table[:, 1::2] = torch.cos(angle[:, : d // 2])
    return table.to(dtype)


class PositionalEmbedding(nn.Module):
    def __init__(self, max_len: int, d: int, kind: str = "learnable"):
        super().__init__()
        if kind not in ("fixed", "learnable"):
            raise ConfigError(f"positional kind must be fixed or learnable, got {kind!r}")
        self.kind, self.max_len = kind, max_len
        if kind == "fixed":
            self.register_buffer("table", sinusoid_table(max_len, d), persistent=False)
        else:
            self.table = nn.Parameter(torch.empty(max_len, d))
            nn.init.trunc_normal_(self.table, std=0.02, a=-0.04, b=0.04)

    def forward(self, positions: torch.Tensor) -> torch.Tensor:
        if positions.numel() and (int(positions.max()) >= self.max_len or int(positions.min()) < 0):
            raise BoundsError(f"position out of range [0, {self.max_len})")
        return self.table[positions]


CALENDAR_UNITS = {
    # name -> table size; the value is used directly as the row index
    "year": None,
    "month": 13,
    "day": 32,
    "weekday": 7,
    "hour": 24,
    "minute": 60,
}


def calendar_decompose(timestamps, units) -> np.ndarray:
    """UTC calendar fields of integer epoch seconds, one column per unit.

    month is 1-12, day 1-31, weekday 0 (Monday) - 6, year is the civil year.
    """
    ts = np.asarray(timestamps, dtype=np.int64)
    secs = ts.astype("datetime64[s]")
    cols = []
    for unit in units:
        if unit == "year":
            cols.append(secs.astype("datetime64[Y]").astype(np.int64) + 1970)
        elif unit == "month":
            cols.append(secs.astype("datetime64[M]").astype(np.int64) % 12 + 1)
        elif unit == "day":
            cols.append((secs.astype("datetime64[D]") - secs.astype("datetime64[M]")).astype(np.int64) + 1)
        elif unit == "weekday":
            cols.append((np.floor_divide(ts, 86400) + 3) % 7)
        elif unit == "hour":
            cols.append(np.floor_divide(ts, 3600) % 24)
        elif unit == "minute":
            cols.append(np.floor_divide(ts, 60) % 60)
        else:
            raise ConfigError(f"unknown calendar unit {unit!r}")
    return np.stack(cols, axis=-1) if cols else np.zeros(ts.shape + (0,), np.int64)


def split_width(d: int, k: int) -> list[int]:
    """Split ``d`` into ``k`` near-equal parts, remainder to the first."""
    base, rem = divmod(d, k)
    return [base + rem] + [base] * (k - 1)


class AbsoluteTimeEmbedding(nn.Module):
    """Calendar-decomposed time embedding: concat of ``w_i * E_i[t_i] + b_i`` over units."""

    def __init__(self, d: int, units=("year", "month", "weekday", "hour"), year_range=(1990, 2030)):
        super().__init__()
        self.units = tuple(units)
        self.year_min, self.year_max = year_range
        self.widths = split_width(d, len(self.units))
        self.tables = nn.ParameterList()
        for unit, width in zip(self.units, self.widths):
            size = CALENDAR_UNITS.get(unit, 0)
            if unit == "year":
                size = self.year_max - self.year_min + 1
            elif size is None or unit not in CALENDAR_UNITS:
                raise ConfigError(f"unknown calendar unit {unit!r}")
            table = nn.Parameter(torch.empty(size, width))
            nn.init.trunc_normal_(table, std=0.02, a=-0.04, b=0.04)
            self.tables.append(table)
        self.scale = nn.Parameter(torch.ones(len(self.units)))
        self.bias = nn.ParameterList(nn.Parameter(torch.zeros(w)) for w in self.widths)

    def indices(self, timestamps, valid=None) -> np.ndarray:
        idx = calendar_decompose(timestamps, self.units)
        if "year" in self.units:
            col = self.units.index("year")
            idx[..., col] -= self.year_min
        valid = np.ones(idx.shape[:-1], bool) if valid is None else np.asarray(valid, bool)
        for col, table in enumerate(self.tables):
            bad = valid & ((idx[..., col] < 0) | (idx[..., col] >= table.shape[0]))
            if bad.any():
                raise BoundsError(f"{self.units[col]} value outside embedding table for some timestamp")
            # pad positions are never attended to; clamp them into range
            idx[..., col] = np.clip(idx[..., col], 0, table.shape[0] - 1)
        return idx

    def forward(self, timestamps, valid=None) -> torch.Tensor:
        idx = torch.from_numpy(self.indices(np.asarray(timestamps), valid))
        parts = [
            self.scale[k] * table[idx[..., k]] + bias
            for k, (table, bias) in enumerate(zip(self.tables, self.bias))
        ]
        return torch.cat(parts, dim=-1)


def bochner_features(t: torch.Tensor, freq: torch.Tensor, phase: torch.Tensor) -> torch.Tensor:
    """Pairs ``[cos(w_i t + b_i), sin(w_i t + b_i)]`` interleaved along the last axis."""
    arg = t[..., None] * freq + phase
    return torch.stack((torch.cos(arg), torch.sin(arg)), dim=-1).flatten(-2)


class BochnerTimeEmbedding(nn.Module):
    """Projection-based time embedding of ``(t - t_min) / time_scale``."""

    def __init__(self, d: int, t_min: int = 0, time_scale: float = 86400.0):
        super().__init__()
        if d % 2:
            raise ConfigError(f"Bochner embedding width must be even, got {d}")
        self.t_min, self.time_scale = int(t_min), float(time_scale)
        # periods from ~2*pi to ~2*pi*1e4 time units
        self.freq = nn.Parameter(1.0 / 10.0 ** torch.linspace(0, 4, d // 2))
        self.phase = nn.Parameter(torch.zeros(d // 2))

    def forward(self, timestamps) -> torch.Tensor:
        t = torch.as_tensor(np.asarray(timestamps, np.int64) - self.t_min)
        t = t.to(self.freq.dtype) / self.time_scale
        return bochner_features(t, self.freq, self.phase)


# ---------------------------------------------------------------- relative

def time_diff_matrix(timestamps, tau: float) -> torch.Tensor:
    """``D[..., i, j] = (t_i - t_j) / tau``; differences are formed in int64 before scaling."""
    if tau <= 0:
        raise ConfigError("tau must be positive")
    t = torch.as_tensor(np.asarray(timestamps, np.int64))
    return (t[..., :, None] - t[..., None, :]).to(torch.float64) / tau


def frequency_ladder(d: int, base: float = 10000.0) -> torch.Tensor:
    """``freq_h = base ** (2h / d)`` for ``h = 0..d-1``."""
    h = torch.arange(d, dtype=torch.float64)
    return base ** (2.0 * h / d)


def sinusoid_diff(D: torch.Tensor, freq: torch.Tensor, phase: torch.Tensor) -> torch.Tensor:
    return bochner_features(D, freq, phase)


def exp_diff(D: torch.Tensor, freq: torch.Tensor) -> torch.Tensor:
    return torch.exp(-D.abs()[..., None] / freq)


def log1p_diff(D: torch.Tensor, freq: torch.Tensor) -> torch.Tensor:
    return torch.log1p(D.abs()[..., None] / freq)


class SinusoidDiffKernel(nn.Module):
    def __init__(self, d: int, base: float = 10000.0):
        super().__init__()
        if d % 2:
            raise ConfigError(f"sinusoid kernel width must be even, got {d}")
        self.freq = nn.Parameter(1.0 / base ** torch.linspace(0, 1, d // 2))
        self.phase = nn.Parameter(torch.zeros(d // 2))

    def forward(self, D: torch.Tensor) -> torch.Tensor:
        return sinusoid_diff(D.to(self.freq.dtype), self.freq, self.phase)


class ExpDiffKernel(nn.Module):
    def __init__(self, d: int, base: float = 10000.0):
        super().__init__()
        self.register_buffer("freq", frequency_ladder(d, base).float())

    def forward(self, D: torch.Tensor) -> torch.Tensor:
        return exp_diff(D.to(self.freq.dtype), self.freq)


class Log1pDiffKernel(nn.Module):
    def __init__(self, d: int, base: float = 10000.0):
        super().__init__()
        self.register_buffer("freq", frequency_ladder(d, base).float())

    def forward(self, D: torch.Tensor) -> torch.Tensor:
        return log1p_diff(D.to(self.freq.dtype), self.freq)


def gaussian_weights(n: int, mu, sigma, dtype=None) -> torch.Tensor:
    """``G[i, j] = exp(-((i - j) - mu)^2 / (2 sigma^2))``."""
    mu = torch.as_tensor(mu, dtype=dtype)
    sigma = torch.as_tensor(sigma, dtype=mu.dtype)
    p = torch.arange(n, dtype=mu.dtype)
    d = p[:, None] - p[None, :]
    return torch.exp(-((d - mu) ** 2) / (2 * sigma ** 2))


class GaussianDistanceWeights(nn.Module):
    def __init__(self, mu: float = 0.0, sigma: float = 1.0):
        super().__init__()
        self.mu = nn.Parameter(torch.tensor(float(mu)))
        # softplus^-1(sigma)
        self.raw_sigma = nn.Parameter(torch.tensor(math.log(math.expm1(sigma))))

    @property
    def sigma(self) -> torch.Tensor:
        return F.softplus(self.raw_sigma)

    def forward(self, n: int) -> torch.Tensor:
        return gaussian_weights(n, self.mu, self.sigma)
