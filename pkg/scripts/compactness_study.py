"""Compression ratio of irregular timelines versus their gcd-grid expansion.

Geometric gaps with success probability p give an expected ratio of 1/p and
Pr(granularity = 1) rising towards 1 with the number of observations.

    python3 scripts/compactness_study.py --n 100 1000 10000 --p 0.2 0.5 0.8 --reps 20
"""

from __future__ import annotations

import argparse

import numpy as np

from itbn.timegrid import compactness_study, prefix_granularities, simulate_geometric_timeline


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[100, 1000, 10000])
    ap.add_argument("--p", type=float, nargs="+", default=[0.2, 0.5, 0.8])
    ap.add_argument("--reps", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print(f"{'n':>6} {'p':>5} {'ratio':>8} {'1/p':>6} {'rel err':>8} {'Pr(g=1)':>8}")
    for n in args.n:
        for p in args.p:
            s = compactness_study(n, p, args.reps, args.seed)
            rel = abs(s.mean_ratio - s.expected_ratio) / s.expected_ratio
            print(f"{n:>6} {p:>5.2f} {s.mean_ratio:>8.3f} {s.expected_ratio:>6.2f} {rel:>8.4f} {s.pr_unit_granularity:>8.3f}")

    # Pr(granularity of the first k gaps is 1) over k, from 1000 paths
    rng = np.random.default_rng(args.seed)
    for p in args.p:
        unit = np.array([prefix_granularities(simulate_geometric_timeline(40, p, rng)) == 1 for _ in range(1000)])
        curve = unit.mean(axis=0)
        print(f"p={p:.2f} Pr(g=1) after 1, 2, 5, 10, 39 gaps: "
              + ", ".join(f"{curve[k - 1]:.3f}" for k in (1, 2, 5, 10, 39)))


if __name__ == "__main__":
    main()
