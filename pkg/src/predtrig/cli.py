"""Command line entry point: run, sweep, schedule, validate."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .errors import (ConfigurationError, ContractError, DimensionError, InvariantViolation, NumericalError,
                     SolverError)
from .orchestrator import monte_carlo_sweep, simulate
from .scenarios import TRIGGER_KINDS, emit_outputs, load_scenario
from .trigger import TriggerCapExceeded, st_next_trigger
from .estimator import VarianceSchedule

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3


def _grid(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad cost grid {text!r}") from exc


def _format(path: str, default: str) -> str:
    """A .csv or .json suffix wins over --format."""
    suffix = path.rsplit(".", 1)[-1].lower() if "." in path else ""
    return suffix if suffix in ("csv", "json") else default


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="predtrig", description=__doc__)
    sub = ap.add_subparsers(dest="verb", required=True)

    def common(p, trigger=True):
        p.add_argument("--scenario", required=True, help="built-in name or JSON file")
        if trigger:
            p.add_argument("--trigger", choices=TRIGGER_KINDS, help="trigger law (default: scenario's)")
            p.add_argument("--horizon-m", type=int, dest="M", help="prediction horizon for PT")
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--out", help="output file (default: print a summary only)")
            p.add_argument("--format", choices=("csv", "json"), default="csv",
                           help="used when the output suffix is neither .csv nor .json")

    run = sub.add_parser("run", help="simulate one run and write its trace")
    common(run)
    run.add_argument("--cost", type=float)
    run.add_argument("--steps", type=int, help="override the scenario horizon")
    run.add_argument("--allocation-out", help="also write the slot allocation log here")

    sweep = sub.add_parser("sweep", help="Monte Carlo sweep over a cost grid")
    common(sweep)
    sweep.add_argument("--cost-grid", type=_grid, help="comma separated costs (default: scenario's grid)")
    sweep.add_argument("--runs", type=int, default=100)
    sweep.add_argument("--steps", type=int)
    sweep.add_argument("--workers", type=int, default=1)

    sched = sub.add_parser("schedule", help="print the self-trigger schedule computed offline")
    common(sched, trigger=False)
    sched.add_argument("--cost", type=float)
    sched.add_argument("--steps", type=int)

    val = sub.add_parser("validate", help="load and check a scenario")
    common(val, trigger=False)
    return ap


def _cmd_run(a) -> None:
    sc = load_scenario(a.scenario)
    res = simulate(sc, a.trigger, a.cost, runs=[0], seed=a.seed, M=a.M, horizon=a.steps, record="basic")
    print(f"{sc.name}: trigger={res.kind} M={res.M} cost={res.cost} comm={res.comm[0]:.4f} err={res.err[0]:.6g}"
          + ("" if res.min_gap is None else f" min_gap={res.min_gap[0].min():.4f}"))
    if a.out:
        emit_outputs(res.trace, a.out, _format(a.out, a.format))
    if a.allocation_out:
        emit_outputs(res.allocation(0), a.allocation_out, _format(a.allocation_out, a.format))


def _cmd_sweep(a) -> None:
    sc = load_scenario(a.scenario)
    summary = monte_carlo_sweep(sc, a.trigger, a.cost_grid, runs=a.runs, horizon=a.steps, seed=a.seed, M=a.M,
                                workers=a.workers)
    for p in summary.points:
        print(f"C={p.C:<10.6g} comm={p.comm_avg:.4f} err={p.err_avg:.6g} err_std={p.err_std:.4g}"
              + ("" if np.isnan(p.perf_avg) else f" perf={p.perf_avg:.6g}"))
    if a.out:
        emit_outputs(summary, a.out, _format(a.out, a.format))


def _cmd_schedule(a) -> None:
    sc = load_scenario(a.scenario)
    cost = sc.trigger.cost if a.cost is None else a.cost
    K = sc.horizon if a.steps is None else a.steps
    law = sc.control_law()
    for i, m in enumerate(sc.agents):
        s = VarianceSchedule(m, law.own_gain(i) if m.p else None)
        times, ell = [1], 1
        while True:
            try:
                h = st_next_trigger(ell, s, cost, sc.trigger.m_cap)
            except TriggerCapExceeded:
                h = sc.trigger.m_cap
            if ell + h > K:
                break
            ell += h
            times.append(ell)
        print(f"agent {i}: " + " ".join(map(str, times)))


def _cmd_validate(a) -> None:
    sc = load_scenario(a.scenario)
    print(f"{sc.name}: ok ({sc.N} agents, horizon {sc.horizon}, trigger {sc.trigger.kind})")


def main(argv=None) -> int:
    a = _parser().parse_args(argv)
    handler = {"run": _cmd_run, "sweep": _cmd_sweep, "schedule": _cmd_schedule, "validate": _cmd_validate}[a.verb]
    try:
        handler(a)
    except (ConfigurationError, DimensionError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SolverError, NumericalError, InvariantViolation, OSError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
