"""Objective, single training step with the clean + perturbed double pass, and the epoch loop."""

from __future__ import annotations

import copy
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
import torch.nn.functional as F

from .checkpoint import make_checkpoint
from .config import Seeds, TrainConfig
from .corpus import LeaveOneOut, SequenceBatch, UserSequences, leave_one_out, make_batches
from .encoder import ADRRec, ModelConfig, predict_scores
from .errors import NumericalError
from .noisereg import lnsr, sample_noise

log = logging.getLogger(__name__)

DTYPES = {"float32": torch.float32, "float64": torch.float64}


def task_loss(logits: torch.Tensor, targets, pad_mask) -> torch.Tensor:
    """Mean cross-entropy over real target positions."""
    mask = torch.as_tensor(pad_mask, dtype=torch.bool)
    targets = torch.as_tensor(targets, dtype=torch.long)
    if not mask.any():
        raise ValueError("batch has no real target")
    return F.cross_entropy(logits[mask], targets[mask])


@dataclass
class Streams:
    """RNG streams owned by the training loop."""

    dropout: torch.Generator
    noise: torch.Generator

    @classmethod
    def from_seeds(cls, seeds: Seeds) -> "Streams":
        return cls(torch.Generator().manual_seed(seeds.dropout), torch.Generator().manual_seed(seeds.noise))


def make_optimizer(cfg: TrainConfig, params) -> torch.optim.Optimizer:
    params = list(params)
    if cfg.optimizer == "sgd":
        return torch.optim.SGD(params, lr=cfg.lr)
    return torch.optim.Adam(params, lr=cfg.lr)


def model_config(cfg: TrainConfig, corpus: UserSequences) -> ModelConfig:
    return ModelConfig(
        mode=cfg.mode,
        n_items=corpus.n_items,
        d_model=cfg.d_model,
        n_layers=cfg.n_layers,
        d_ff=cfg.d_ff,
        max_len=cfg.max_len,
        dropout=cfg.dropout,
        head_dim=cfg.head_dim,
        pos_kind=cfg.pos_kind,
        tau=cfg.tau,
        freq_base=cfg.freq_base,
        time_units=tuple(cfg.time_units),
        year_range=tuple(cfg.year_range),
        bochner_scale=cfg.bochner_scale,
        t_min=corpus.t_min,
        sigma0=cfg.lnsr.sigma0,
    )


def build_model(cfg: TrainConfig, corpus: UserSequences) -> ADRRec:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seeds.init)
        model = ADRRec(model_config(cfg, corpus))
    return model.to(DTYPES[cfg.dtype])


@dataclass
class StepResult:
    task_loss: float
    reg: float
    total: float


def objective(model: ADRRec, batch: SequenceBatch, cfg: TrainConfig, streams: Streams | None = None,
              eps: list | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """(task loss, LNSR term) for one batch.

    The perturbed pass replays the clean pass's dropout masks so the
    regularizer sees only the injected noise. ``eps`` fixes the noise draw
    (used by the gradient check); otherwise it comes from ``streams.noise``.
    """
    mask = torch.as_tensor(batch.pad_mask, dtype=torch.bool)
    gen = streams.dropout if streams is not None else None
    state = gen.get_state() if gen is not None else None
    clean = model(batch.items, batch.times, mask, generator=gen)
    logits = predict_scores(clean.hidden[mask], model.item_table)
    loss = task_loss(logits, torch.as_tensor(batch.targets)[mask], torch.ones(len(logits), dtype=torch.bool))
    reg = loss.new_zeros(())
    if model.mode.noise_enabled:
        weights = cfg.lnsr.weights(model.cfg.n_layers)
        draws = [eps] if eps is not None else [
            sample_noise(model.embed.noise_shapes(), streams.noise, cfg.lnsr.delta, model.dtype)
            for _ in range(cfg.noise_draws)
        ]
        for e in draws:
            if gen is not None:
                gen.set_state(state)
            noise_input = model.embedding_noise(batch.items, e)
            noisy = model(batch.items, batch.times, mask, noise_input=noise_input, generator=gen)
            reg = reg + lnsr(clean.layer_taps, noisy.layer_taps, weights, mask)
        reg = reg / len(draws)
    return loss, reg


def _grad_norms(model: ADRRec) -> dict[str, float]:
    return {n: float(p.grad.norm()) for n, p in model.named_parameters() if p.grad is not None}


def train_step(model: ADRRec, batch: SequenceBatch, cfg: TrainConfig, optimizer: torch.optim.Optimizer,
               streams: Streams, step: int = 0) -> StepResult:
    """One optimizer step on ``task_loss + lam * lnsr``."""
    model.train()
    loss, reg = objective(model, batch, cfg, streams)
    total = loss + cfg.lam * reg
    if not torch.isfinite(total):
        raise NumericalError(
            f"non-finite objective at step {step}: task={float(loss.detach())} reg={float(reg.detach())} lam={cfg.lam}"
        )
    optimizer.zero_grad(set_to_none=True)
    total.backward()
    norms = _grad_norms(model)
    if not all(math.isfinite(v) for v in norms.values()):
        bad = {k: v for k, v in norms.items() if not math.isfinite(v)}
        raise NumericalError(f"non-finite gradient at step {step} (lam={cfg.lam}): {bad}")
    optimizer.step()
    return StepResult(float(loss.detach()), float(reg.detach()), float(total.detach()))


@dataclass
class EpochRecord:
    epoch: int
    task_loss: float
    reg: float
    val_ndcg10: float
    steps: int
    wall_clock: float = 0.0


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    checkpoint_id: str | None = None

    def records(self, include_timing: bool = False) -> list[dict]:
        out = []
        for rec in self.epochs:
            d = asdict(rec)
            if not include_timing:
                d.pop("wall_clock")
            out.append(d)
        return out

    def write_jsonl(self, path: str | Path, include_timing: bool = False) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records(include_timing):
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


@dataclass
class FitResult:
    report: TrainReport
    model: ADRRec
    checkpoint: dict
    split: LeaveOneOut


def fit(cfg: TrainConfig, corpus: UserSequences, progress: bool = False) -> FitResult:
    """Train for ``cfg.epochs`` epochs, keeping the parameters with the best validation NDCG@10."""
    from .evaluation import evaluate, validation_users

    cfg.validate()
    split = leave_one_out(corpus)
    model = build_model(cfg, corpus)
    optimizer = make_optimizer(cfg, model.parameters())
    streams = Streams.from_seeds(cfg.seeds)
    train = split.train()
    val_users = validation_users(split, cfg.val_users, cfg.seeds.negatives)
    report = TrainReport()
    best_score, best_state, best_opt = -1.0, None, None
    step = 0
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        losses, regs = [], []
        for batch in make_batches(train, cfg.max_len, cfg.batch_size, cfg.seeds.shuffle, epoch):
            res = train_step(model, batch, cfg, optimizer, streams, step)
            losses.append(res.task_loss)
            regs.append(res.reg)
            step += 1
        val = evaluate(model, split, ks=[10], n_negatives=cfg.n_negatives, seed=cfg.seeds.negatives,
                       split_name="val", max_len=cfg.max_len, users=val_users,
                       batch_size=cfg.eval_batch_size)
        ndcg = val.ndcg[10]
        rec = EpochRecord(
            epoch=epoch + 1,
            task_loss=sum(losses) / max(len(losses), 1),
            reg=sum(regs) / max(len(regs), 1),
            val_ndcg10=ndcg,
            steps=len(losses),
            wall_clock=time.perf_counter() - start,
        )
        report.epochs.append(rec)
        if progress:
            log.info("epoch %d loss %.4f reg %.5f val ndcg@10 %.4f (%.1fs)", rec.epoch, rec.task_loss,
                     rec.reg, ndcg, rec.wall_clock)
        if ndcg > best_score:
            best_score, report.best_epoch = ndcg, epoch + 1
            best_state = copy.deepcopy(model.state_dict())
            best_opt = copy.deepcopy(optimizer.state_dict())
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    ckpt = make_checkpoint(model, cfg.to_dict(), best_opt if best_opt is not None else optimizer.state_dict(),
                           {"best_epoch": report.best_epoch})
    report.checkpoint_id = ckpt["id"]
    return FitResult(report, model, ckpt, split)
