"""Random finite trees: insider value vs the enlarged DP oracle, and the per-atom CEI sign."""
from __future__ import annotations

import argparse

import numpy as np

from insider_acc.instances import random_instance
from insider_acc.product import enlarged_dp_oracle, value_insider


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--seed", type=int, default=38)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    err, worst_atom, worst_expected, negative = 0.0, np.inf, np.inf, 0
    for _ in range(args.n):
        inst = random_instance(rng)
        val = value_insider(inst.lattice, inst.payoff, inst.density)
        oracle = enlarged_dp_oracle(inst.lattice, inst.payoff, inst.g_map, inst.grid)
        err = max(err, float(np.max(np.abs(val.insider_value[0] - oracle))))
        m = min(float(np.nanmin(c)) for c in val.cei)
        worst_atom = min(worst_atom, m)
        negative += m < -1e-12
        worst_expected = min(worst_expected, min(float(c.min()) for c in val.expected_cei))
    print(f"max |insider - oracle|        {err:.2e}")
    print(f"min per-atom CEI               {worst_atom:.4f} ({negative}/{args.n} trees negative)")
    print(f"min conditional expected CEI   {worst_expected:.2e}")


if __name__ == "__main__":
    main()
