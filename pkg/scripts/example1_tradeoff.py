"""Communication/estimation trade-off on the scalar example for ET, PT and ST.

Writes one sweep table per trigger to --outdir and prints the curves.
"""

import argparse
from pathlib import Path

from predtrig import emit_outputs, load_scenario, monte_carlo_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--runs", type=int, default=2000)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--horizon-m", type=int, default=2)
    ap.add_argument("--outdir", default="results")
    a = ap.parse_args()
    out = Path(a.outdir)
    out.mkdir(parents=True, exist_ok=True)
    sc = load_scenario("example1")
    for kind in ("et", "pt", "st"):
        s = monte_carlo_sweep(sc, kind, runs=a.runs, horizon=a.steps, seed=a.seed, M=a.horizon_m)
        emit_outputs(s, out / f"example1_tradeoff_{kind}.csv")
        print(kind)
        for p in s.points:
            print(f"  C={p.C:<5g} comm={p.comm_avg:.4f} err={p.err_avg:.5f} +- {p.err_se:.5f}")


if __name__ == "__main__":
    main()
