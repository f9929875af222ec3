"""Dataset statistics after 5-core filtering, next to the published values.

    python3 scripts/run_dataset_stats.py --ml1m path/to/ratings.dat --beauty path/to/ratings_Beauty.csv
"""

import argparse
import json

from adrrec.experiments import PUBLISHED_STATS, stats_row


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ml1m")
    ap.add_argument("--beauty")
    ap.add_argument("--min-count", type=int, default=5)
    args = ap.parse_args()
    rows = []
    for name, path, fmt in (("ml-1m", args.ml1m, "movielens-dat"), ("beauty", args.beauty, "amazon-csv")):
        if not path:
            continue
        row = stats_row(name, path, fmt, args.min_count)
        ref = PUBLISHED_STATS[name]
        print(f"{name:8s} users {row.stats['n_users']:>7} ({ref['n_users']})  items {row.stats['n_items']:>7} "
              f"({ref['n_items']})  avg {row.stats['avg_length']:8.2f} ({ref['avg_length']})  "
              f"{'ok' if row.passed else 'OUT OF TOLERANCE'}  {row.seconds:.1f}s")
        rows.append({"name": name, **row.stats, "deviation": row.deviations, "seconds": row.seconds})
    print(json.dumps(rows, indent=2))


if __name__ == "__main__":
    main()
