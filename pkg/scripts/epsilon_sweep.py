"""Expected CEI as the noise level grows, on common paths, plus the large-noise limit."""
from __future__ import annotations

import argparse

import numpy as np

from insider_acc.scenario import ScenarioConfig, epsilon_sweep


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--eps", type=float, nargs="+", default=[0.1, 1.0, 10.0, 100.0, 1e6])
    ap.add_argument("--n-paths", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    cfg = ScenarioConfig(n_paths=args.n_paths, seed=args.seed)
    reports = epsilon_sweep(cfg, args.eps, threads=args.threads)
    print(f"{'epsilon':>10} {'base':>9} {'E[CEI]':>9} {'se':>8} {'z':>7}")
    for e, r in zip(args.eps, reports):
        z = r.expected_cei / r.expected_cei_stderr
        print(f"{e:10.4g} {r.base_value:9.4f} {r.expected_cei:9.4f} {r.expected_cei_stderr:8.4f} {z:7.2f}")
    cei = np.array([r.expected_cei for r in reports])
    print("monotone non-increasing:", bool(np.all(np.diff(cei) <= 0)))


if __name__ == "__main__":
    main()
