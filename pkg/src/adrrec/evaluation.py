"""Ranking metrics, leave-one-out evaluation, OOD span masking and multi-seed robustness."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Mapping, Sequence

import numpy as np
import torch

from .corpus import LeaveOneOut, UserSequences, leave_one_out, left_pad, sample_negatives
from .errors import ProtocolError


def rank_of_target(scores: Mapping[Hashable, float], target: Hashable) -> int:
    """1-based rank; every other candidate scoring at least as high ranks ahead (pessimistic ties)."""
    if target not in scores:
        raise ProtocolError(f"target {target!r} not among candidates")
    s = scores[target]
    return 1 + sum(1 for c, v in scores.items() if c != target and v >= s)


def ranks_from_scores(scores: np.ndarray) -> np.ndarray:
    """Vectorised :func:`rank_of_target` for a B x C matrix whose column 0 is the target."""
    scores = np.asarray(scores)
    return 1 + (scores[:, 1:] >= scores[:, :1]).sum(axis=1)


def ndcg_at_k(rank, k: int):
    rank = np.asarray(rank)
    out = np.where(rank <= k, 1.0 / np.log2(rank + 1.0), 0.0)
    return float(out) if out.ndim == 0 else out


def recall_at_k(rank, k: int):
    out = (np.asarray(rank) <= k).astype(float)
    return float(out) if out.ndim == 0 else out


@dataclass
class MetricsReport:
    ndcg: dict[int, float]
    recall: dict[int, float]
    n_users: int
    protocol: str = "standard"
    split: str = "test"
    n_negatives: int | None = 100
    seeds: list[int] = field(default_factory=list)
    ndcg_std: dict[int, float] | None = None
    recall_std: dict[int, float] | None = None
    per_seed: list[dict] | None = None
    skipped: int = 0

    def to_dict(self) -> dict:
        d = {
            "protocol": self.protocol,
            "split": self.split,
            "n_users": self.n_users,
            "skipped": self.skipped,
            "n_negatives": self.n_negatives,
            "seeds": list(self.seeds),
            "ndcg": {str(k): v for k, v in sorted(self.ndcg.items())},
            "recall": {str(k): v for k, v in sorted(self.recall.items())},
        }
        if self.ndcg_std is not None:
            d["ndcg_std"] = {str(k): v for k, v in sorted(self.ndcg_std.items())}
            d["recall_std"] = {str(k): v for k, v in sorted(self.recall_std.items())}
        if self.per_seed is not None:
            d["per_seed"] = self.per_seed
        return d

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def table(self) -> str:
        ks = sorted(self.ndcg)
        rows = [f"{'metric':<10}{'value':>10}" + (f"{'std':>10}" if self.ndcg_std else "")]
        for name, vals, stds in (("NDCG", self.ndcg, self.ndcg_std), ("Recall", self.recall, self.recall_std)):
            for k in ks:
                line = f"{name + '@' + str(k):<10}{vals[k]:>10.4f}"
                if stds:
                    line += f"{stds[k]:>10.4f}"
                rows.append(line)
        return "\n".join(rows)


def validation_users(split: LeaveOneOut, cap: int | None, seed: int) -> list[int]:
    if cap is None or cap >= len(split.users):
        return list(split.users)
    rng = np.random.default_rng([seed, 7])
    return sorted(rng.choice(split.users, size=cap, replace=False).tolist())


def mask_span(length: int, fraction: float, rng: np.random.Generator) -> tuple[int, int] | None:
    """(start, size) of a contiguous span of ``ceil(fraction * length)`` positions that avoids the last one.

    ``None`` when the span cannot fit (length 1 with a non-empty span).
    """
    size = math.ceil(round(fraction * length, 9))
    if size == 0:
        return 0, 0
    if size > length - 1:
        if length <= 1:
            return None
        size = length - 1
    start = int(rng.integers(0, length - size))
    return start, size


def _candidates(u: int, target: int, history: np.ndarray, n_items: int, n_negatives: int | None,
                seed: int) -> np.ndarray:
    if n_negatives is None:
        others = np.arange(1, n_items + 1)
        return np.concatenate(([target], others[others != target]))
    negs = sample_negatives(u, n_negatives, n_items, history, seed)
    return np.array([target] + negs, np.int64)


def evaluate(model, split: LeaveOneOut | UserSequences, ks: Sequence[int] = (5, 10),
             n_negatives: int | None = 100, seed: int = 0, split_name: str = "test", max_len: int = 50,
             users: Sequence[int] | None = None, batch_size: int = 256, mask_fraction: float = 0.0,
             mask_seed: int = 0) -> MetricsReport:
    """Score each user's held-out item against sampled negatives.

    ``model`` needs ``score_candidates(items, times, pad_mask, candidates)``.
    Negatives exclude the user's whole history; ``n_negatives=None`` ranks the
    target against every item instead. With ``mask_fraction > 0`` a contiguous
    span of each context is removed first (OOD protocol).
    """
    if isinstance(split, UserSequences):
        split = leave_one_out(split)
    if not 0 <= mask_fraction < 1:
        raise ProtocolError("mask fraction must be in [0, 1)")
    n_items = split.corpus.n_items
    users = split.users if users is None else list(users)
    rows_i, rows_t, cands, skipped = [], [], [], 0
    for u in users:
        ctx_i, ctx_t, target, _target_time = split.context(u, split_name)
        items, times = left_pad(ctx_i, ctx_t, max_len)
        if mask_fraction > 0:
            length = min(len(ctx_i), max_len)
            span = mask_span(length, mask_fraction, np.random.default_rng([mask_seed, u]))
            if span is None:
                skipped += 1
                continue
            start, size = span
            lo = max_len - length + start
            items[lo:lo + size] = 0
        rows_i.append(items)
        rows_t.append(times)
        cands.append(_candidates(u, target, split.corpus.items[u], n_items, n_negatives, seed))
    ranks = []
    was_training = getattr(model, "training", False)
    if hasattr(model, "eval"):
        model.eval()
    try:
        with torch.no_grad():
            for start in range(0, len(rows_i), batch_size):
                items = np.stack(rows_i[start:start + batch_size])
                times = np.stack(rows_t[start:start + batch_size])
                cand = np.stack(cands[start:start + batch_size])
                scores = model.score_candidates(items, times, items != 0, cand)
                scores = scores.detach().cpu().numpy() if torch.is_tensor(scores) else np.asarray(scores)
                ranks.append(ranks_from_scores(scores))
    finally:
        if was_training:
            model.train()
    ranks = np.concatenate(ranks) if ranks else np.zeros(0, np.int64)
    n = len(ranks)
    if n == 0:
        raise ProtocolError("no users to evaluate")
    ndcg = {k: float(np.mean(ndcg_at_k(ranks, k))) for k in ks}
    recall = {k: float(np.mean(recall_at_k(ranks, k))) for k in ks}
    protocol = "standard" if mask_fraction == 0 else f"ood({mask_fraction:g})"
    return MetricsReport(ndcg, recall, n, protocol, split_name, n_negatives, [seed], skipped=skipped)


def ood_mask_eval(model, split, fraction: float, seed: int = 0, **kwargs) -> MetricsReport:
    """:func:`evaluate` after removing a random contiguous span of each test context.

    ``seed`` fixes both the spans and the sampled negatives.
    """
    if not 0 <= fraction < 1:
        raise ProtocolError("fraction must be in [0, 1)")
    return evaluate(model, split, seed=seed, mask_fraction=fraction, mask_seed=seed, **kwargs)


def aggregate(reports: Sequence[MetricsReport], seeds: Sequence[int]) -> MetricsReport:
    """Mean and population std across per-seed reports."""
    ks = sorted(reports[0].ndcg)
    nd = np.array([[r.ndcg[k] for k in ks] for r in reports])
    rc = np.array([[r.recall[k] for k in ks] for r in reports])
    return MetricsReport(
        ndcg=dict(zip(ks, nd.mean(0).tolist())),
        recall=dict(zip(ks, rc.mean(0).tolist())),
        n_users=reports[0].n_users,
        protocol=reports[0].protocol,
        split=reports[0].split,
        n_negatives=reports[0].n_negatives,
        seeds=list(seeds),
        ndcg_std=dict(zip(ks, nd.std(0).tolist())),
        recall_std=dict(zip(ks, rc.std(0).tolist())),
        per_seed=[dict(seed=s, **{k: v for k, v in r.to_dict().items() if k in ("ndcg", "recall")})
                  for s, r in zip(seeds, reports)],
        skipped=reports[0].skipped,
    )


def multiseed_eval(cfg, corpus: UserSequences, seeds: Sequence[int], ks: Sequence[int] | None = None,
                   mask_fractions: Sequence[float] = ()) -> tuple[MetricsReport, dict[float, MetricsReport]]:
    """Fit and evaluate once per seed; the seed drives init, shuffle, dropout and noise.

    Returns the aggregate test report and, for each OOD fraction requested, an
    aggregate OOD report over the same fitted models.
    """
    from .training import fit

    if len(seeds) < 2:
        raise ProtocolError("multiseed evaluation needs at least two seeds")
    ks = list(ks or cfg.eval_ks)
    reports: list[MetricsReport] = []
    ood: dict[float, list] = {f: [] for f in mask_fractions}
    for s in seeds:
        res = fit(cfg.with_seed(s), corpus)
        kw = dict(ks=ks, n_negatives=cfg.n_negatives, max_len=cfg.max_len, batch_size=cfg.eval_batch_size)
        reports.append(evaluate(res.model, res.split, seed=cfg.seeds.negatives, **kw))
        for f in mask_fractions:
            ood[f].append(ood_mask_eval(res.model, res.split, f, seed=cfg.seeds.negatives, **kw))
    return aggregate(reports, seeds), {f: aggregate(r, seeds) for f, r in ood.items()}


class PopularityModel:
    """Scores items by how often they occur in the training prefixes."""

    training = False

    def __init__(self, split: LeaveOneOut):
        counts = np.zeros(split.corpus.n_items + 1)
        for items, _ in split.train():
            np.add.at(counts, items, 1)
        self.counts = counts

    def score_candidates(self, items, times, pad_mask, candidates):
        return self.counts[np.asarray(candidates)]
