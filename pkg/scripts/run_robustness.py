"""Multi-seed mean/std and OOD span masking (10%, 30%) on the cyclic corpus."""

import argparse
import json

from adrrec.experiments import robustness, synthetic_config


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--mode", default="p-b-s-l-r-o")
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--seeds", default="1,2,3")
    args = ap.parse_args()
    cfg = synthetic_config(mode=args.mode, epochs=args.epochs, eval_ks=[10])
    agg, ood = robustness(cfg, seeds=[int(s) for s in args.seeds.split(",")])
    print(agg.table())
    for f, rep in ood.items():
        drop = (agg.ndcg[10] - rep.ndcg[10]) / agg.ndcg[10]
        print(f"OOD {f:.0%}: NDCG@10 {rep.ndcg[10]:.4f} +- {rep.ndcg_std[10]:.4f} (relative drop {drop:.1%})")
    print(json.dumps({"standard": agg.to_dict(), "ood": {str(f): r.to_dict() for f, r in ood.items()}}, indent=2))


if __name__ == "__main__":
    main()
