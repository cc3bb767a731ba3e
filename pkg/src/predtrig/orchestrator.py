"""Closed-loop simulation of all agents and Monte Carlo sweeps over the communication cost.

The engine advances a batch of independent runs in lock step. Per step k:

1. plant update with u_{k-1}
2. measurements
3. local Kalman filters
4. trigger evaluation (ET decides gamma_k, PT decides gamma_{k+M}, ST reads its schedule)
5. broadcast of due estimates
6. remote-predictor prediction and resets
7. control inputs u_k

Every run draws its noise from its own seed derived from (base seed, run
index), so a run's realisation does not depend on the batch it is part of or
on the cost value being simulated.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.linalg import block_diag

from .control import ControlLaw, assemble_closed_loop, input_matrix
from .errors import ConfigurationError, ContractError, TriggerCapExceeded
from .estimator import GaussianBelief, VarianceSchedule
from .network import allocation_log
from .numerics import psd_sqrt
from .remote_predictor import RemoteEstimate
from .scenarios import Scenario, TRIGGER_KINDS
from .trigger import Cost, TriggerBook, cost_at, st_next_trigger

NEVER = np.iinfo(np.int64).max


@dataclass
class RunNoise:
    x0: np.ndarray  # (R, D)
    process: list  # per agent (R, K, d_v)
    measurement: list  # per agent (R, K, d_w)
    drops: np.ndarray  # (R, K, N, N) uniforms


def draw_noise(scenario: Scenario, K: int, run_ids: Sequence[int], seed: int) -> RunNoise:
    R = len(run_ids)
    models = scenario.agents
    N = len(models)
    x0 = np.empty((R, sum(scenario.state_dims)))
    proc = [np.empty((R, K, m.process_noise.dim)) for m in models]
    meas = [np.empty((R, K, m.measurement_noise.dim)) for m in models]
    drops = np.empty((R, K, N, N))
    x0_mean = np.concatenate([m.x0_mean for m in models])
    S0 = psd_sqrt(block_diag(*[m.X0 for m in models]))
    for r, run in enumerate(run_ids):
        s_proc, s_meas, s_drop = np.random.SeedSequence(seed, spawn_key=(int(run),)).spawn(3)
        g_proc, g_meas = np.random.default_rng(s_proc), np.random.default_rng(s_meas)
        x0[r] = x0_mean + S0 @ g_proc.standard_normal(x0.shape[1])
        for i, m in enumerate(models):
            proc[i][r] = m.process_noise.sample_eta(g_proc, K)
            meas[i][r] = m.measurement_noise.sample_eta(g_meas, K)
        drops[r] = np.random.default_rng(s_drop).random((K, N, N))
    return RunNoise(x0, proc, meas, drops)


@dataclass
class SimTrace:
    """Per-step record of a batch of runs; leading axes are (run, step).

    Stacked-state arrays have last axis D = sum of agent state sizes. Step 0
    holds the initial condition.
    """

    kind: str
    M: int
    x: np.ndarray
    x_hat: np.ndarray
    x_check: np.ndarray  # each agent's own remote copy (what its peers predict)
    u: np.ndarray
    v: np.ndarray  # process noise that entered step k
    gamma: np.ndarray  # (R, K+1, N)
    E_bar: np.ndarray
    E_mean: np.ndarray
    E_var: np.ndarray
    ell: np.ndarray
    kappa: np.ndarray
    delivered: np.ndarray  # (R, K+1, N sender, N receiver)
    copies: Optional[np.ndarray] = None  # (R, K+1, N receiver, D)
    state_slices: tuple = ()

    @property
    def e(self) -> np.ndarray:
        return self.x - self.x_check

    @property
    def e_hat(self) -> np.ndarray:
        return self.x - self.x_hat

    def run(self, r: int) -> "SimTrace":
        sl = slice(r, r + 1)
        return SimTrace(self.kind, self.M, *(getattr(self, f)[sl] for f in _TRACE_ARRAYS),
                        None if self.copies is None else self.copies[sl], self.state_slices)


_TRACE_ARRAYS = ("x", "x_hat", "x_check", "u", "v", "gamma", "E_bar", "E_mean", "E_var", "ell", "kappa", "delivered")


@dataclass
class BatchResult:
    kind: str
    cost: object
    M: int
    run_ids: np.ndarray
    comm: np.ndarray  # per run, mean gamma over k=1..K and agents
    err: np.ndarray  # per run, mean squared remote error
    err_kf: np.ndarray
    perf: Optional[np.ndarray]
    min_gap: Optional[np.ndarray]  # (R, gaps)
    switch_step: np.ndarray
    schedule: np.ndarray  # (R, N, K+1) decisions actually consumed
    decided_at: np.ndarray
    trace: Optional[SimTrace] = None

    @property
    def crashed(self) -> np.ndarray:
        if self.min_gap is None:
            raise ContractError("scenario has no gaps to check")
        return self.min_gap.min(axis=1) <= 0.0

    def books(self, run: int) -> dict:
        K = self.schedule.shape[2] - 1
        out = {}
        for i in range(self.schedule.shape[1]):
            book = TriggerBook(self.M)
            for step in range(1, K + 1):
                book.record(step, int(self.schedule[run, i, step]), at=int(self.decided_at[run, i, step]))
            out[i] = book
        return out

    def allocation(self, run: int = 0) -> list[dict]:
        return allocation_log(self.books(run), self.kind)


@dataclass
class AgentRuntime:
    """Snapshot of one agent of one run at one step, assembled from a trace."""

    id: int
    belief: GaussianBelief
    self_copy: RemoteEstimate
    peer_copies: dict
    book: TriggerBook
    gain_row: tuple


class _Schedules:
    """Variance schedules per agent, keyed by the step at which the model switched."""

    def __init__(self, scenario: Scenario, law: ControlLaw):
        self.sc = scenario
        self.law = law
        self._cache: dict = {}
        self._st: dict = {}

    def get(self, i: int, key: int) -> VarianceSchedule:
        if (i, key) in self._cache:
            return self._cache[(i, key)]
        nominal = self.sc.agents[i]
        F = self.law.own_gain(i) if nominal.p else None
        if key == NEVER:
            sched = VarianceSchedule(nominal, F)
        else:
            switched = self.sc.switched_agents[i]
            sched = self.get(i, NEVER).fork(lambda t, s=key, a=nominal, b=switched: b if t > s else a, key)
        self._cache[(i, key)] = sched
        return sched

    def st_horizon(self, i: int, key: int, ell: int, cost, m_cap: int) -> int:
        ck = (i, key, ell)
        if ck not in self._st:
            try:
                self._st[ck] = st_next_trigger(ell, self.get(i, key), cost, m_cap)
            except TriggerCapExceeded:
                self._st[ck] = m_cap
        return self._st[ck]


def simulate(scenario: Scenario, kind: Optional[str] = None, cost: Optional[Cost] = None, *,
             runs: Union[int, Sequence[int]] = 1, seed: int = 0, M: Optional[int] = None,
             horizon: Optional[int] = None, record: Optional[str] = None,
             force_gamma: Optional[int] = None, noise: Optional[RunNoise] = None) -> BatchResult:
    """Simulate a batch of runs.

    ``runs`` is a count or an explicit list of run indices. ``record`` is None
    (statistics only), "basic" (full per-step trace) or "full" (also every
    receiver's copies). ``force_gamma`` overrides every decision with 0 or 1
    (γ_1 stays 1).
    """
    sc = scenario
    tc = sc.trigger
    kind = (kind or tc.kind).lower()
    if kind not in TRIGGER_KINDS:
        raise ConfigurationError(f"unknown trigger kind {kind!r}")
    cost = tc.cost if cost is None else cost
    M = (tc.M if M is None else M) if kind == "pt" else 0
    if M < 0:
        raise ConfigurationError("M must be non-negative")
    K = sc.horizon if horizon is None else int(horizon)
    run_ids = np.arange(runs) if np.ndim(runs) == 0 else np.asarray(runs, dtype=int)
    R, N = len(run_ids), sc.N
    if R < 1:
        raise ConfigurationError("need at least one run")
    noise = draw_noise(sc, K, run_ids, seed) if noise is None else noise

    law = sc.control_law()
    nd, pd = sc.state_dims, sc.input_dims
    so, po = np.cumsum([0, *nd]), np.cumsum([0, *pd])
    D, P = int(so[-1]), int(po[-1])
    ssl = tuple(slice(so[i], so[i + 1]) for i in range(N))
    psl = tuple(slice(po[i], po[i + 1]) for i in range(N))
    Ft = law.stacked()
    r_pub = law.stacked_offsets() if P else np.zeros(0)
    regimes = [sc.agents] + ([sc.switched_agents] if sc.switched_agents is not None else [])
    Bt = [input_matrix(ms) if P else np.zeros((D, 0)) for ms in regimes]
    Mcl = [assemble_closed_loop(ms, law)[0] for ms in regimes]
    Br = [b @ r_pub for b in Bt]
    Fown = [law.own_gain(i) for i in range(N)]
    scheds = _Schedules(sc, law)
    width = K + max(M, 1) + 2

    # state
    x = noise.x0.copy()
    xh = np.tile(np.concatenate([m.x0_mean for m in sc.agents]), (R, 1))
    Xc = np.repeat(xh[:, None, :], N, axis=1)  # receiver j's copies of everybody
    switch_step = np.full(R, NEVER, dtype=np.int64)
    sched = np.zeros((R, N, width), dtype=np.int8)
    dec_at = np.zeros((R, N, width), dtype=np.int64)
    kappa = np.zeros((R, N), dtype=np.int64)
    ell = np.zeros((R, N), dtype=np.int64)

    sched[:, :, 1] = 1
    dec_at[:, :, 1] = 1 - M
    kappa[:] = 1
    if kind == "pt" and force_gamma is None:
        # slots 2..M are decided before the run from variance terms only
        for i in range(N):
            s0 = scheds.get(i, NEVER)
            kap = 1
            for j in range(2, M + 1):
                delta = j - kap
                g = int(s0.variance_term(kap, delta) >= cost_at(cost, j))
                sched[:, i, j] = g
                dec_at[:, i, j] = j - M
                if g:
                    kap = j
            kappa[:, i] = kap

    def inputs(k: int) -> np.ndarray:
        if not P:
            return np.zeros((R, 0))
        r_act = r_pub if sc.actual_offsets is None else np.asarray(sc.actual_offsets(k), dtype=float)
        u = np.empty((R, P))
        for i in range(N):
            Fi = Ft[psl[i]]
            u[:, psl[i]] = Xc[:, i, :] @ Fi.T + (xh[:, ssl[i]] - Xc[:, i, ssl[i]]) @ Fown[i].T + r_act[psl[i]]
        return u

    u = inputs(0)
    rec = record is not None
    if rec:
        T = dict(x=np.zeros((R, K + 1, D)), x_hat=np.zeros((R, K + 1, D)), x_check=np.zeros((R, K + 1, D)),
                 u=np.zeros((R, K + 1, P)), v=np.zeros((R, K + 1, D)), gamma=np.zeros((R, K + 1, N), np.int8),
                 E_bar=np.zeros((R, K + 1, N)), E_mean=np.zeros((R, K + 1, N)), E_var=np.zeros((R, K + 1, N)),
                 ell=np.zeros((R, K + 1, N), np.int64), kappa=np.zeros((R, K + 1, N), np.int64),
                 delivered=np.zeros((R, K + 1, N, N), bool))
        copies = np.zeros((R, K + 1, N, D)) if record == "full" else None
        T["x"][:, 0], T["x_hat"][:, 0], T["u"][:, 0] = x, xh, u
        T["x_check"][:, 0] = xh
        T["kappa"][:, 0] = kappa
        if copies is not None:
            copies[:, 0] = Xc

    err_sum = np.zeros(R)
    err_kf_sum = np.zeros(R)
    perf_sum = np.zeros(R) if sc.x_des_rel is not None else None
    gaps = list(sc.gap_indices)
    min_gap = np.full((R, len(gaps)), np.inf) if gaps else None
    Trel = sc.relative_transform

    for k in range(1, K + 1):
        reg = switch_step < k
        any_sw = bool(reg.any())
        keys = np.where(reg, switch_step, NEVER)
        ukeys = np.unique(keys)

        # 1-2 plant and measurement
        x_new = np.empty_like(x)
        y = []
        v_all = np.empty((R, D))
        for i in range(N):
            for ri, ms in enumerate(regimes):
                mask = reg if ri else ~reg
                if ri and not any_sw:
                    continue
                if not mask.any():
                    continue
                m = ms[i]
                v = noise.process[i][mask, k - 1] @ m.process_noise.shaping.T
                xi_ = x[mask, ssl[i]] @ m.A.T + v
                if m.p:
                    xi_ = xi_ + u[mask, psl[i]] @ m.B.T
                x_new[mask, ssl[i]] = xi_
                v_all[mask, ssl[i]] = v
        x = x_new
        for i in range(N):
            yi = np.empty((R, sc.agents[i].m))
            for ri, ms in enumerate(regimes):
                mask = reg if ri else ~reg
                if (ri and not any_sw) or not mask.any():
                    continue
                m = ms[i]
                yi[mask] = x[mask, ssl[i]] @ m.H.T + noise.measurement[i][mask, k - 1] @ m.measurement_noise.shaping.T
            y.append(yi)

        # 3 Kalman filters
        for i in range(N):
            for key in ukeys:
                mask = keys == key
                s = scheds.get(i, int(key))
                m = s.model(k)
                pm = xh[mask, ssl[i]] @ m.A.T
                if m.p:
                    pm = pm + u[mask, psl[i]] @ m.B.T
                xh[mask, ssl[i]] = pm + (y[i][mask] - pm @ m.H.T) @ s.gain(k).T

        # 4 triggers
        Pc = np.empty_like(Xc)
        for ri in range(len(regimes)):
            mask = reg if ri else ~reg
            if mask.any():
                Pc[mask] = Xc[mask] @ Mcl[ri].T + Br[ri]
        gamma = np.zeros((R, N), dtype=bool)
        Em = np.zeros((R, N))
        Ev = np.zeros((R, N))
        for i in range(N):
            d = xh[:, ssl[i]] - Pc[:, i, ssl[i]]
            if kind == "et":
                Em[:, i] = np.sum(d * d, axis=1) + 0.0
                gamma[:, i] = (Em[:, i] >= cost_at(cost, k)) | (k == 1)
            elif kind == "pt":
                target = k + M
                if target > 1 and force_gamma is None:
                    case1 = k > kappa[:, i]
                    for key in ukeys:
                        gm = keys == key
                        s = scheds.get(i, int(key))
                        m1 = gm & case1
                        if m1.any():
                            dd = d[m1]
                            for t in range(k + 1, k + M + 1):
                                dd = dd @ s.model(t).closed_loop(s.F).T
                            Em[m1, i] = np.sum(dd * dd, axis=1)
                            Ev[m1, i] = s.variance_term(k, M)
                        m2 = gm & ~case1
                        for kap in np.unique(kappa[m2, i]):
                            mk = m2 & (kappa[:, i] == kap)
                            Ev[mk, i] = s.variance_term(int(kap), int(k + M - kap))
                    g = (Em[:, i] + Ev[:, i]) >= cost_at(cost, target)
                    sched[:, i, target] = g
                    dec_at[:, i, target] = k
                    kappa[g, i] = target
                gamma[:, i] = sched[:, i, k] == 1
            else:
                gamma[:, i] = sched[:, i, k] == 1
                if k > 1:
                    pairs = ell[:, i]
                    for key in ukeys:
                        gm = keys == key
                        s = scheds.get(i, int(key))
                        for l in np.unique(pairs[gm]):
                            Ev[gm & (pairs == l), i] = s.variance_term(int(l), k - int(l))
            if force_gamma is not None and k > 1:
                gamma[:, i] = bool(force_gamma)
            sched[:, i, k] = gamma[:, i]
            if kind == "et":
                dec_at[:, i, k] = k
                kappa[gamma[:, i], i] = k
            ell[gamma[:, i], i] = k
            if kind == "st":
                for key in ukeys:
                    fired = gamma[:, i] & (keys == key)
                    if not fired.any():
                        continue
                    h = scheds.st_horizon(i, int(key), k, cost, tc.m_cap)
                    if k + h < width:
                        sched[fired, i, k + h] = 1
                        dec_at[fired, i, k + h] = k
                    kappa[fired, i] = k + h
        Eb = Em + Ev

        # 5-6 broadcast and remote predictors
        dl = noise.drops[:, k - 1] >= sc.p_drop
        idx = np.arange(N)
        dl[:, idx, idx] = True
        recv = gamma[:, :, None] & dl  # (R, sender, receiver)
        Xc = Pc
        for i in range(N):
            for j in range(N):
                mask = recv[:, i, j]
                if mask.any():
                    Xc[mask, j, ssl[i]] = xh[mask, ssl[i]]

        # 7 control
        u = inputs(k)

        # bookkeeping and statistics
        own = np.concatenate([Xc[:, i, ssl[i]] for i in range(N)], axis=1)
        err_sum += np.sum((x - own) ** 2, axis=1)
        err_kf_sum += np.sum((x - xh) ** 2, axis=1)
        if Trel is not None:
            xr = x @ Trel.T
            if perf_sum is not None:
                perf_sum += np.mean(np.abs(xr - sc.x_des_rel), axis=1)
            if gaps:
                np.minimum(min_gap, xr[:, gaps], out=min_gap)
        if sc.surface is not None:
            a, idx_s = sc.surface_probe
            crossed = (switch_step == NEVER) & (x[:, so[a] + idx_s] >= sc.surface.threshold)
            switch_step[crossed] = k
        if rec:
            T["x"][:, k], T["x_hat"][:, k], T["x_check"][:, k] = x, xh, own
            T["u"][:, k], T["v"][:, k] = u, v_all
            T["gamma"][:, k] = gamma
            T["E_bar"][:, k], T["E_mean"][:, k], T["E_var"][:, k] = Eb, Em, Ev
            T["ell"][:, k], T["kappa"][:, k] = ell, kappa
            T["delivered"][:, k] = recv
            if copies is not None:
                copies[:, k] = Xc

    consumed = sched[:, :, : K + 1].copy()
    consumed[:, :, 0] = 0
    trace = None
    if rec:
        trace = SimTrace(kind, M, **T, copies=copies, state_slices=ssl)
    return BatchResult(kind, cost, M, run_ids, consumed[:, :, 1:].mean(axis=(1, 2)), err_sum / (K * N),
                       err_kf_sum / (K * N), None if perf_sum is None else perf_sum / K, min_gap, switch_step,
                       consumed, dec_at[:, :, : K + 1], trace)


def run_simulation(scenario: Scenario, trigger_kind: Optional[str] = None, cost: Optional[Cost] = None,
                   seed: int = 0, *, M: Optional[int] = None, horizon: Optional[int] = None,
                   record: str = "basic", run_index: int = 0) -> SimTrace:
    """Single-run trace for (scenario, trigger, cost, seed)."""
    res = simulate(scenario, trigger_kind, cost, runs=[run_index], seed=seed, M=M, horizon=horizon, record=record)
    res.trace.batch = res
    return res.trace


@dataclass(frozen=True)
class SweepPoint:
    C: float
    comm_avg: float
    err_avg: float
    err_std: float
    runs: int
    comm_std: float = 0.0
    perf_avg: float = float("nan")
    perf_std: float = float("nan")
    crash_frac: float = float("nan")

    @property
    def err_se(self) -> float:
        return self.err_std / np.sqrt(self.runs)


@dataclass
class SweepSummary:
    kind: str
    M: int
    points: list = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(p, name) for p in self.points])

    def rows(self) -> list[dict]:
        return [{"C": p.C, "comm_avg": p.comm_avg, "err_avg": p.err_avg, "err_std": p.err_std, "runs": p.runs,
                 "comm_std": p.comm_std, "perf_avg": p.perf_avg, "perf_std": p.perf_std,
                 "crash_frac": p.crash_frac} for p in self.points]


def _summarize(C: float, res: BatchResult) -> SweepPoint:
    R = len(res.run_ids)
    ddof = 1 if R > 1 else 0
    perf = res.perf
    crash = float(res.crashed.mean()) if res.min_gap is not None else float("nan")
    return SweepPoint(float(C), float(res.comm.mean()), float(res.err.mean()), float(res.err.std(ddof=ddof)), R,
                      float(res.comm.std(ddof=ddof)),
                      float("nan") if perf is None else float(perf.mean()),
                      float("nan") if perf is None else float(perf.std(ddof=ddof)), crash)


def monte_carlo_sweep(scenario: Scenario, trigger_kind: Optional[str] = None, cost_grid: Optional[Sequence] = None,
                      runs: int = 100, horizon: Optional[int] = None, seed: int = 0, *, M: Optional[int] = None,
                      workers: int = 1, chunk: int = 500) -> SweepSummary:
    """Average communication and remote error per grid cost. Runs share noise across the grid."""
    kind = (trigger_kind or scenario.trigger.kind).lower()
    grid = list(scenario.trigger.cost_grid if cost_grid is None else cost_grid)
    if not grid:
        raise ConfigurationError("cost grid is empty")
    if runs < 1:
        raise ConfigurationError("runs must be at least 1")
    K = scenario.horizon if horizon is None else int(horizon)
    ids = np.arange(runs)
    blocks = [ids[s:s + chunk] for s in range(0, runs, chunk)]
    noises = [draw_noise(scenario, K, b, seed) for b in blocks]

    def point(C):
        parts = [simulate(scenario, kind, C, runs=b, seed=seed, M=M, horizon=K, noise=nz)
                 for b, nz in zip(blocks, noises)]
        return _summarize(C, _concat(parts))

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            pts = list(ex.map(point, grid))
    else:
        pts = [point(C) for C in grid]
    m_used = (scenario.trigger.M if M is None else M) if kind == "pt" else 0
    return SweepSummary(kind, m_used, pts)


def _concat(parts: list) -> BatchResult:
    if len(parts) == 1:
        return parts[0]
    cat = lambda name: None if getattr(parts[0], name) is None else np.concatenate([getattr(p, name) for p in parts])
    p0 = parts[0]
    return BatchResult(p0.kind, p0.cost, p0.M, cat("run_ids"), cat("comm"), cat("err"), cat("err_kf"), cat("perf"),
                       cat("min_gap"), cat("switch_step"), cat("schedule"), cat("decided_at"))


def performance_metric(traces, x_des=None, transform=None) -> float:
    """Mean absolute tracking error per state component and step (steps 1..K)."""
    if isinstance(traces, SimTrace):
        traces = [traces]
    vals = []
    for tr in traces:
        if x_des is None:
            raise ContractError("performance metric needs a reference")
        x = tr.x[:, 1:]
        if transform is not None:
            x = x @ np.asarray(transform).T
        vals.append(np.abs(x - np.asarray(x_des)).mean(axis=(1, 2)))
    return float(np.mean(np.concatenate(vals)))


def agent_runtime(trace: SimTrace, result: BatchResult, scenario: Scenario, agent: int, k: int,
                  run: int = 0) -> AgentRuntime:
    """Rebuild one agent's state at step k of run ``run`` from a recorded trace."""
    sl = trace.state_slices[agent]
    sched = VarianceSchedule(scenario.agents[agent],
                             scenario.control_law().own_gain(agent) if scenario.agents[agent].p else None)
    belief = GaussianBelief(trace.x_hat[run, k, sl].copy(), sched.posterior(k), k)
    self_copy = RemoteEstimate(trace.x_check[run, k, sl].copy(), k, agent)
    peers = {}
    if trace.copies is not None:
        for j, slj in enumerate(trace.state_slices):
            if j != agent:
                peers[j] = RemoteEstimate(trace.copies[run, k, agent, slj].copy(), k, j)
    book = TriggerBook(result.M)
    for step in range(1, min(k + result.M, result.schedule.shape[2] - 1) + 1):
        book.record(step, int(result.schedule[run, agent, step]), at=int(result.decided_at[run, agent, step]))
    law = scenario.control_law()
    return AgentRuntime(agent, belief, self_copy, peers, book, law.gains[agent])
