"""Print a per-threshold table from the aggregate CSVs of a ``run`` output directory."""

import argparse
import csv
import statistics
from collections import defaultdict
from pathlib import Path


def rows(path: Path):
    with path.open() as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("run_dir", type=Path)
    args = ap.parse_args(argv)
    groups = defaultdict(list)
    for r in rows(args.run_dir / "cnot_distribution.csv"):
        groups[r["threshold"]].append(r)
    print(f"{'threshold':>10} {'conv':>5} {'iters':>6} {'cnots':>6} {'shots':>10} {'error/mHa':>10}")
    for label, rs in sorted(groups.items()):
        conv = sum(int(r["converged"]) for r in rs)
        med = lambda key: statistics.median(float(r[key]) for r in rs)  # noqa: E731
        print(f"{label:>10} {conv:>2}/{len(rs):<2} {med('iterations'):>6.1f} {med('cnot_count'):>6.0f} "
              f"{med('cumulative_shots'):>10.3g} {1e3 * med('final_error'):>10.3f}")


if __name__ == "__main__":
    main()
