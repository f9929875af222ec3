"""Learnable-noise linear layer and the layer-wise noise stability regularizer."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch
from torch import nn

from .errors import ConfigError


def noisy_linear_forward(x, mu_w, sigma_w, mu_b, sigma_b, eps_w=None, eps_b=None):
    """``x @ (mu_w + |sigma_w| * eps_w) + mu_b + |sigma_b| * eps_b``.

    ``mu_w`` is ``m x n`` (inputs x outputs). Missing noise means the
    deterministic layer.
    """
    w = mu_w if eps_w is None else mu_w + sigma_w.abs() * eps_w
    b = mu_b if eps_b is None else mu_b + sigma_b.abs() * eps_b
    return x @ w + b


class NoisyLinear(nn.Module):
    """Linear map whose weight and bias carry learnable-scale Gaussian perturbations.

    ``forward(x)`` is the clean layer; ``forward(x, (eps_w, eps_b))`` the
    perturbed one. ``perturbation`` returns just the difference between the two,
    which is what the encoder adds to its embedded input.
    """

    def __init__(self, m: int, n: int, sigma0: float = 0.017, identity_init: bool = False):
        super().__init__()
        self.m, self.n = m, n
        self.mu_w = nn.Parameter(torch.empty(m, n))
        if identity_init and m == n:
            with torch.no_grad():
                self.mu_w.copy_(torch.eye(m))
        else:
            nn.init.trunc_normal_(self.mu_w, std=0.02, a=-0.04, b=0.04)
        self.mu_b = nn.Parameter(torch.zeros(n))
        self.sigma_w = nn.Parameter(torch.full((m, n), float(sigma0)))
        self.sigma_b = nn.Parameter(torch.full((n,), float(sigma0)))

    def forward(self, x, eps=None):
        eps_w, eps_b = (None, None) if eps is None else eps
        return noisy_linear_forward(x, self.mu_w, self.sigma_w, self.mu_b, self.sigma_b, eps_w, eps_b)

    def perturbation(self, x, eps):
        eps_w, eps_b = eps
        return x @ (self.sigma_w.abs() * eps_w) + self.sigma_b.abs() * eps_b

    def noise_shapes(self):
        return [(self.m, self.n), (self.n,)]


def sample_noise(shapes: Sequence[tuple[int, ...]], generator: torch.Generator,
                 delta: float | None = None, dtype=torch.float32) -> list[torch.Tensor]:
    """Standard-normal draws for each shape, jointly rescaled so their total L2 norm is at most ``delta``."""
    draws = [torch.randn(s, generator=generator, dtype=dtype) for s in shapes]
    if delta is not None:
        norm = torch.sqrt(sum((d ** 2).sum() for d in draws))
        if norm > delta:
            draws = [d * (delta / norm) for d in draws]
    return draws


@dataclass
class LnsrConfig:
    k: int = 1
    layer_weight: float | list[float] = 1.0
    sigma0: float = 0.017
    delta: float = 5.0

    def validate(self, n_layers: int | None = None) -> None:
        if self.k < 1 or (n_layers is not None and self.k > n_layers):
            raise ConfigError(f"lnsr.k must be in [1, {n_layers}], got {self.k}")
        if self.delta <= 0:
            raise ConfigError("lnsr.delta must be positive")
        if self.sigma0 < 0:
            raise ConfigError("lnsr.sigma0 must be nonnegative")
        weights = self.layer_weight if isinstance(self.layer_weight, list) else [self.layer_weight]
        if any(w < 0 for w in weights):
            raise ConfigError("lnsr.layer_weight must be nonnegative")
        if isinstance(self.layer_weight, list) and n_layers is not None:
            if len(self.layer_weight) != n_layers - self.k + 1:
                raise ConfigError(f"lnsr.layer_weight needs {n_layers - self.k + 1} entries (layers k..L)")

    def weights(self, n_layers: int) -> list[float]:
        """Per-layer weights for all ``n_layers`` layers; zero below ``k``."""
        tail = n_layers - self.k + 1
        lam = self.layer_weight if isinstance(self.layer_weight, list) else [self.layer_weight] * tail
        return [0.0] * (self.k - 1) + [float(w) for w in lam]


def lnsr(clean_taps: Sequence[torch.Tensor], noisy_taps: Sequence[torch.Tensor],
         weights: Sequence[float], pad_mask: torch.Tensor) -> torch.Tensor:
    """Weighted sum over layers of the per-token mean squared distance between clean and noisy taps.

    Only real (``pad_mask`` true) tokens enter the mean.
    """
    if not (len(clean_taps) == len(noisy_taps) == len(weights)):
        raise ValueError(
            f"tap/weight length mismatch: {len(clean_taps)}, {len(noisy_taps)}, {len(weights)}"
        )
    mask = torch.as_tensor(pad_mask, dtype=torch.bool)
    n_real = mask.sum()
    if n_real == 0:
        raise ValueError("lnsr needs at least one real token")
    total = clean_taps[0].new_zeros(())
    for lam, clean, noisy in zip(weights, clean_taps, noisy_taps):
        if lam == 0:
            continue
        sq = ((clean - noisy) ** 2).sum(-1)
        total = total + lam * sq[mask].sum() / n_real
    return total
