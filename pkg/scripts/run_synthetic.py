"""Fit the default model on the cyclic corpus and report held-out Recall@1."""

import argparse
import json

from adrrec.experiments import synthetic_config, synthetic_end_to_end


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--users", type=int, default=500)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--mode", default="p-b-s-l-r-o")
    args = ap.parse_args()
    out = synthetic_end_to_end(synthetic_config(epochs=args.epochs, mode=args.mode), n_users=args.users)
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
