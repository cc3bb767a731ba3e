"""Three-vehicle braking manoeuvre: crash counts for PT, ST and full
communication, plus a scan over the lead's deceleration."""

import argparse
from pathlib import Path

import numpy as np

from predtrig import emit_outputs, simulate
from predtrig.scenarios import platoon3_brake


def summary(kind, C, decel, runs, seed):
    res = simulate(platoon3_brake(kind, decel=decel), kind, C, runs=runs, seed=seed)
    gap = res.min_gap[:, 0]
    return res, int(np.sum(gap <= 0)), float(gap.min()), float(res.comm.mean())


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--runs", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--outdir", default="results")
    a = ap.parse_args()
    out = Path(a.outdir)
    out.mkdir(parents=True, exist_ok=True)
    settings = (("pt", 10.0), ("st", 0.7), ("et", 0.0))
    print("decel   trigger  C     crashes  min gap  comm")
    for decel in (0.1, 0.15, 0.17, 0.2, 0.3, 0.5, np.inf):
        for kind, C in settings:
            _, crashes, gap, comm = summary(kind, C, decel, a.runs, a.seed)
            print(f"{decel:<7g} {kind:<8} {C:<5g} {crashes:>3}/{a.runs}  {gap:8.3f}  {comm:.4f}")
    for kind, C in settings[:2]:
        res = simulate(platoon3_brake(kind), kind, C, runs=[0], seed=a.seed, record="basic")
        emit_outputs(res.trace, out / f"platoon_braking_{kind}.csv")


if __name__ == "__main__":
    main()
