"""Experiment drivers shared by the acceptance suite and scripts/."""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .corpus import UserSequences, build_sequences, cyclic_corpus, dataset_stats, read_interactions
from .evaluation import PopularityModel, evaluate, leave_one_out, multiseed_eval
from .training import fit

# published statistics and the tolerances they are checked at
PUBLISHED_STATS = {
    "ml-1m": dict(n_users=6040, n_items=3416, avg_length=165.56, tol_users=0.01, tol_items=0.02, tol_avg=0.01),
    "beauty": dict(n_users=52024, n_items=57289, avg_length=8.9, tol_users=0.02, tol_items=0.02, tol_avg=0.02),
}
DATA_ENV = {"ml-1m": ("ADRREC_ML1M", "movielens-dat"), "beauty": ("ADRREC_BEAUTY", "amazon-csv")}


def dataset_path(name: str) -> tuple[str | None, str]:
    var, fmt = DATA_ENV[name]
    return os.environ.get(var), fmt


def rel_dev(got: float, want: float) -> float:
    return abs(got - want) / abs(want)


@dataclass
class StatsRow:
    name: str
    stats: dict
    seconds: float
    deviations: dict = field(default_factory=dict)
    passed: bool = False


def stats_row(name: str, path: str, fmt: str, min_count: int = 5) -> StatsRow:
    start = time.perf_counter()
    stats = dataset_stats(build_sequences(read_interactions(path, fmt), min_count)).as_dict()
    seconds = time.perf_counter() - start
    ref = PUBLISHED_STATS[name]
    dev = {k: rel_dev(stats[k], ref[k]) for k in ("n_users", "n_items", "avg_length")}
    ok = (dev["n_users"] <= ref["tol_users"] and dev["n_items"] <= ref["tol_items"]
          and dev["avg_length"] <= ref["tol_avg"] and seconds < 120)
    return StatsRow(name, stats, seconds, dev, ok)


def subsample_users(corpus: UserSequences, n: int, seed: int = 0) -> UserSequences:
    if n >= corpus.n_users:
        return corpus
    users = np.sort(np.random.default_rng(seed).choice(corpus.n_users, size=n, replace=False))
    return corpus.subset(users.tolist())


def synthetic_config(**overrides) -> TrainConfig:
    """Defaults with full-catalogue ranking: every cyclic user has seen all 20 items."""
    base = dict(n_negatives=None, eval_ks=[1, 5, 10], epochs=20)
    base.update(overrides)
    return TrainConfig(**base).validate()


def movielens_config(**overrides) -> TrainConfig:
    base = dict(max_len=200, tau=3600.0, epochs=10, eval_ks=[5, 10])
    base.update(overrides)
    return TrainConfig(**base).validate()


def synthetic_end_to_end(cfg: TrainConfig | None = None, n_users: int = 500) -> dict:
    cfg = cfg or synthetic_config()
    corpus = cyclic_corpus(n_users=n_users)
    start = time.perf_counter()
    res = fit(cfg, corpus)
    seconds = time.perf_counter() - start
    rep = evaluate(res.model, res.split, ks=[1, 10], n_negatives=None, max_len=cfg.max_len,
                   seed=cfg.seeds.negatives)
    return {"recall@1": rep.recall[1], "ndcg@10": rep.ndcg[10], "seconds": seconds,
            "epochs": cfg.epochs, "best_epoch": res.report.best_epoch}


def robustness(cfg: TrainConfig | None = None, seeds=(1, 2, 3), fractions=(0.1, 0.3), n_users: int = 500):
    cfg = cfg or synthetic_config(epochs=10)
    agg, ood = multiseed_eval(cfg, cyclic_corpus(n_users=n_users), list(seeds), ks=[10],
                              mask_fractions=list(fractions))
    return agg, ood


def directional_claims(corpus: UserSequences, seeds=(1, 2, 3), full_mode: str = "p-b-s-l-r-o",
                       base_mode: str = "p", cfg: TrainConfig | None = None) -> dict:
    """NDCG@10 of ``full_mode``, ``base_mode`` and popularity on one corpus, per seed."""
    cfg = cfg or movielens_config()
    split = leave_one_out(corpus)
    kw = dict(ks=[10], n_negatives=cfg.n_negatives, max_len=cfg.max_len, seed=cfg.seeds.negatives)
    pop = evaluate(PopularityModel(split), split, **kw).ndcg[10]
    full, base = [], []
    for s in seeds:
        for mode, out in ((full_mode, full), (base_mode, base)):
            res = fit(cfg.replace(mode=mode).with_seed(s), corpus)
            out.append(evaluate(res.model, res.split, **kw).ndcg[10])
    wins = sum(f > b for f, b in zip(full, base))
    return {"popularity": pop, full_mode: full, base_mode: base, "wins": wins,
            "lift_over_popularity": float(np.mean(full)) / pop - 1 if pop > 0 else float("inf")}
