"""Central finite-difference check of autograd gradients of the full training objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .config import LnsrConfig, TrainConfig
from .corpus import SequenceBatch, UserSequences
from .encoder import ADRRec
from .noisereg import sample_noise
from .training import build_model, objective


@dataclass
class GradcheckResult:
    errors: dict[str, float]
    tolerance: float

    @property
    def worst(self) -> tuple[str, float]:
        name = max(self.errors, key=self.errors.get)
        return name, self.errors[name]

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.errors.values())


def relative_error(a: torch.Tensor, b: torch.Tensor, floor: float = 1e-8) -> float:
    """``|a - b| / max(|a|, |b|)`` in L2 over the whole tensor.

    When both norms are below ``floor`` the gradient is identically zero up to
    round-off (e.g. a key bias that softmax cancels) and the error is reported
    as the absolute difference instead.
    """
    denom = max(float(a.norm()), float(b.norm()))
    if denom < floor:
        return float((a - b).norm())
    return float((a - b).norm()) / denom


def finite_difference_grad(f, param: torch.Tensor, h: float = 1e-5) -> torch.Tensor:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``param`` (perturbed in place)."""
    grad = torch.zeros_like(param)
    flat, gflat = param.data.view(-1), grad.view(-1)
    for i in range(flat.numel()):
        old = flat[i].item()
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def tiny_setup(mode: str = "p-b-s-l-r-o", seed: int = 0, lam: float = 0.5):
    """Tiny float64 model (d_model 8, L 2, N 4, |V| 10) with a fixed batch and fixed noise draw.

    Parameters are re-drawn at unit-ish scale so every gradient is far from
    the finite-difference noise floor.
    """
    cfg = TrainConfig(
        mode=mode, d_model=8, n_layers=2, d_ff=16, max_len=4, dropout=0.0, lam=lam,
        lnsr=LnsrConfig(k=1, layer_weight=1.0, sigma0=0.3, delta=5.0), dtype="float64",
        tau=3600.0, bochner_scale=3600.0,
    ).validate()
    base = 1_600_000_000
    corpus = UserSequences(
        user_ids=["a", "b"],
        item_ids=[str(i) for i in range(1, 11)],
        items=[np.array([3, 1, 4, 1, 5]), np.array([9, 2, 6])],
        times=[base + np.array([0, 3600, 9000, 20000, 86400 * 3]), base + np.array([500, 7200, 7300])],
    )
    model = build_model(cfg, corpus)
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith("raw_sigma") or ".norm" in name or name.startswith("input_norm"):
                p.add_(0.1 * torch.randn(p.shape, generator=g, dtype=p.dtype))
            elif "sigma_" in name:
                p.copy_(0.2 + 0.2 * torch.rand(p.shape, generator=g, dtype=p.dtype))
            else:
                p.copy_(0.5 * torch.randn(p.shape, generator=g, dtype=p.dtype))
        model.item_emb.weight[0].zero_()
    batch = SequenceBatch(
        items=np.array([[3, 1, 4, 1], [0, 0, 9, 2]]),
        times=np.array([corpus.times[0][:4], [0, 0, *corpus.times[1][:2]]]),
        pad_mask=np.array([[True] * 4, [False, False, True, True]]),
        targets=np.array([[1, 4, 1, 5], [0, 0, 2, 6]]),
    )
    eps = sample_noise(model.embed.noise_shapes(), g, cfg.lnsr.delta, torch.float64)
    return model, batch, cfg, eps


def gradcheck(model: ADRRec, batch: SequenceBatch, cfg: TrainConfig, eps, h: float = 1e-5,
              tolerance: float = 1e-4) -> GradcheckResult:
    """Compare autograd with central differences for every parameter tensor of ``task + lam * lnsr``."""
    model.eval()  # dropout off; the objective itself does not depend on the flag otherwise

    def total() -> torch.Tensor:
        loss, reg = objective(model, batch, cfg, None, eps)
        return loss + cfg.lam * reg

    model.zero_grad(set_to_none=True)
    total().backward()
    analytic = {n: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
                for n, p in model.named_parameters()}
    errors = {}
    with torch.no_grad():
        for name, p in model.named_parameters():
            numeric = finite_difference_grad(lambda: float(total()), p, h)
            errors[name] = relative_error(analytic[name], numeric)
    return GradcheckResult(errors, tolerance)
