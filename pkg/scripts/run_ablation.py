"""Kernel ablation on a user subsample: NDCG@10 per mode and seed, plus popularity.

    python3 scripts/run_ablation.py --ratings ratings.dat --users 2000 --modes p,p-b-s-l-r-o
"""

import argparse
import json

import numpy as np

from adrrec.corpus import build_sequences, cyclic_corpus, read_interactions
from adrrec.evaluation import PopularityModel, evaluate, leave_one_out
from adrrec.experiments import movielens_config, subsample_users, synthetic_config
from adrrec.training import fit


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ratings", help="MovieLens ratings.dat; the cyclic corpus is used when omitted")
    ap.add_argument("--format", default="movielens-dat")
    ap.add_argument("--users", type=int, default=2000)
    ap.add_argument("--modes", default="p,p-b-s-l-r-o,p-b-s-l-r,p-s-l-e,p-b-l-e-o")
    ap.add_argument("--seeds", default="1,2,3")
    ap.add_argument("--epochs", type=int, default=10)
    args = ap.parse_args()
    if args.ratings:
        corpus = build_sequences(read_interactions(args.ratings, args.format), 5)
        corpus = subsample_users(corpus, args.users)
        cfg = movielens_config(epochs=args.epochs)
    else:
        corpus = cyclic_corpus(n_users=args.users)
        cfg = synthetic_config(epochs=args.epochs)
    seeds = [int(s) for s in args.seeds.split(",")]
    split = leave_one_out(corpus)
    kw = dict(ks=[5, 10], n_negatives=cfg.n_negatives, max_len=cfg.max_len, seed=cfg.seeds.negatives)
    table = {"popularity": evaluate(PopularityModel(split), split, **kw).to_dict()}
    for mode in args.modes.split(","):
        scores = []
        for s in seeds:
            res = fit(cfg.replace(mode=mode).with_seed(s), corpus)
            scores.append(evaluate(res.model, res.split, **kw).ndcg[10])
        table[mode] = {"ndcg10": scores, "mean": float(np.mean(scores)), "std": float(np.std(scores))}
        print(f"{mode:16s} NDCG@10 {np.mean(scores):.4f} +- {np.std(scores):.4f}")
    print(json.dumps(table, indent=2))


if __name__ == "__main__":
    main()
