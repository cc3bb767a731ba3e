"""Scenario definitions: built-ins, JSON ingestion and result emission."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.linalg import block_diag

from .control import ControlLaw, assemble_closed_loop, make_law_from_stacked, law_for_models
from .errors import ConfigurationError, DimensionError
from .numerics import solve_lqr, spectral_radius
from .plant import LinearModel, NoiseSpec, SurfaceChange, build_platoon_model

TRIGGER_KINDS = ("et", "pt", "st")
SCHEMA_VERSION = 1


@dataclass
class TriggerConfig:
    kind: str = "pt"
    M: int = 2
    cost: float = 0.25
    cost_grid: tuple = ()
    m_cap: int = 1000

    def __post_init__(self):
        if self.kind not in TRIGGER_KINDS:
            raise ConfigurationError(f"trigger kind must be one of {TRIGGER_KINDS}, got {self.kind!r}")
        if self.M < 0:
            raise ConfigurationError("prediction horizon M must be non-negative")
        if self.m_cap < 1:
            raise ConfigurationError("m_cap must be at least 1")


@dataclass
class Scenario:
    """Everything a simulation run needs besides the trigger choice and seed.

    For the platoon, ``relative_transform`` maps the stacked agent states to
    the velocity/gap ordering; it is used for the stability check, the
    tracking metric and crash detection (``gap_indices`` into that ordering).
    ``actual_offsets(k)`` overrides the input offsets the agents really apply
    at step k (the public ones in ``law`` stay what everybody predicts with).
    """

    name: str
    agents: list
    law: Optional[ControlLaw] = None
    trigger: TriggerConfig = field(default_factory=TriggerConfig)
    p_drop: float = 0.0
    horizon: int = 200
    dt: float = 1.0
    switched_agents: Optional[list] = None
    surface: Optional[SurfaceChange] = None
    surface_probe: tuple = (0, 1)
    relative_transform: Optional[np.ndarray] = None
    x_des_rel: Optional[np.ndarray] = None
    gap_indices: tuple = ()
    actual_offsets: Optional[Callable[[int], np.ndarray]] = None
    allow_unstable: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return len(self.agents)

    @property
    def state_dims(self) -> list[int]:
        return [m.n for m in self.agents]

    @property
    def input_dims(self) -> list[int]:
        return [m.p for m in self.agents]

    def control_law(self) -> ControlLaw:
        if self.law is not None:
            return self.law
        return make_law_from_stacked(np.zeros((sum(self.input_dims), sum(self.state_dims))),
                                     self.state_dims, self.input_dims)

    def closed_loop_radius(self, switched: bool = False) -> float:
        models = self.switched_agents if switched else self.agents
        Acl = assemble_closed_loop(models, self.control_law())[0]
        if self.relative_transform is not None:
            T = self.relative_transform
            Acl = T @ Acl @ np.linalg.pinv(T)
        return spectral_radius(Acl)

    def validate(self) -> "Scenario":
        if not self.agents:
            raise ConfigurationError("scenario has no agents")
        if self.horizon < 1:
            raise ConfigurationError("horizon must be at least one step")
        if not 0.0 <= self.p_drop <= 1.0:
            raise ConfigurationError(f"p_drop={self.p_drop} outside [0, 1]")
        law = self.control_law()
        if law.N != self.N or list(law.state_dims) != self.state_dims or list(law.input_dims) != self.input_dims:
            raise DimensionError("control law dimensions do not match the agent models")
        if self.switched_agents is not None:
            if len(self.switched_agents) != self.N or [m.n for m in self.switched_agents] != self.state_dims:
                raise DimensionError("switched models do not match the nominal agents")
            if self.surface is None:
                raise ConfigurationError("switched models given without a switching rule")
        if self.surface is not None and self.switched_agents is None:
            raise ConfigurationError("switching rule given without switched models")
        if self.relative_transform is not None and self.relative_transform.shape[1] != sum(self.state_dims):
            raise DimensionError("relative transform does not act on the stacked state")
        if self.x_des_rel is not None and self.relative_transform is not None and \
                self.x_des_rel.shape != (self.relative_transform.shape[0],):
            raise DimensionError("reference does not match the relative state dimension")
        if not self.allow_unstable and np.any(law.stacked()):
            for switched in (False, True) if self.switched_agents else (False,):
                rho = self.closed_loop_radius(switched)
                if rho >= 1.0:
                    raise ConfigurationError(f"closed loop is not stable (spectral radius {rho:.6f} >= 1)")
        return self


# built-in scenarios --------------------------------------------------------

EXAMPLE1_GRID = (0.0, 0.02, 0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8, 1.0, 1.5, 2.0, 3.0)


def example1(kind: str = "st", M: int = 2, cost: float = 0.6) -> Scenario:
    model = LinearModel(A=[[0.98]], B=np.zeros((1, 0)), H=[[1.0]], Q=[[0.1]], R=[[0.1]], x0_mean=[1.0], X0=[[1.0]])
    return Scenario("example1", [model], trigger=TriggerConfig(kind, M, cost, EXAMPLE1_GRID), horizon=200).validate()


PLATOON_SPEED = 22.2
PLATOON_GAP = 10.0


def _platoon_reference(N: int, v: float = PLATOON_SPEED, gap: float = PLATOON_GAP) -> np.ndarray:
    ref = np.zeros(2 * N - 1)
    ref[0::2] = v
    ref[1::2] = gap
    return ref


def platoon_lqr(N: int, dt: float = 0.1, q: float = 1.0, r: float = 1000.0) -> np.ndarray:
    pm = build_platoon_model(N, dt)
    return solve_lqr(pm.A_rel, pm.B_rel, q * np.eye(2 * N - 1), r * np.eye(N))


# the tracking signals are small; costs above ~0.3 leave only the forced first slot
PLATOON10_GRID = (0.0, 1e-4, 3e-4, 1e-3, 3e-3, 0.01, 0.03, 0.1, 0.3)


def platoon10(kind: str = "pt", M: int = 2, cost: float = 1.0, N: int = 10, horizon_s: float = 25.0,
              p_drop: float = 0.1) -> Scenario:
    dt = 0.1
    pm = build_platoon_model(N, dt, SurfaceChange())
    F_rel = platoon_lqr(N, dt)
    ref = _platoon_reference(N)
    law = law_for_models(pm.agents, F_rel @ pm.transform, -F_rel @ ref)
    grid = PLATOON10_GRID
    return Scenario("platoon10", pm.agents, law, TriggerConfig(kind, M, cost, grid), p_drop=p_drop,
                    horizon=int(round(horizon_s / dt)), dt=dt, switched_agents=pm.switched_agents,
                    surface=pm.surface, surface_probe=(0, 1), relative_transform=pm.transform,
                    x_des_rel=ref, gap_indices=tuple(pm.gap_indices),
                    meta={"lqr_Q": 1.0, "lqr_R": 1000.0}).validate()


BRAKE_TIME_S = 10.0
BRAKE_DECEL = 0.17


def lead_relative_selector(N: int, follower_ignores_lead_error: bool = True) -> list[np.ndarray]:
    """Per-agent maps from the relative state to the deviation each agent feeds its gain.

    Followers track the lead's velocity rather than a fixed speed. With
    ``follower_ignores_lead_error`` the followers also drop the lead's own
    speed-tracking error, so the lead's private reference never enters their law.
    """
    D = 2 * N - 1
    W = np.zeros((D, D))
    for i in range(1, N):
        W[2 * i, 0] = 1.0
    maps = [np.eye(D) - W]
    for _ in range(1, N):
        S = np.eye(D) - W
        if follower_ignores_lead_error:
            S[0, 0] = 0.0
        maps.append(S)
    return maps


BRAKE_COSTS = {"pt": 10.0, "st": 0.7, "et": 10.0}


def platoon3_brake(kind: str = "pt", M: int = 2, cost: Optional[float] = None, horizon_s: float = 30.0,
                   decel: float = BRAKE_DECEL, brake_time_s: float = BRAKE_TIME_S, p_drop: float = 0.0) -> Scenario:
    """Three vehicles; from ``brake_time_s`` the lead's private speed reference
    ramps down at ``decel`` m/s^2 (``decel=inf`` drops it to zero at once).
    Peers keep predicting with the nominal offsets."""
    N, dt = 3, 0.1
    pm = build_platoon_model(N, dt)
    F_rel = platoon_lqr(N, dt)
    maps = lead_relative_selector(N)
    F_abs = np.vstack([F_rel[i] @ maps[i] @ pm.transform for i in range(N)])
    ref = _platoon_reference(N)
    ref[2::2] = 0.0  # followers' speed deviation is relative to the lead

    def offsets_for(v_ref: float) -> np.ndarray:
        out = []
        for i in range(N):
            c = ref.copy()
            c[0] = v_ref if i == 0 else 0.0
            out.append(-F_rel[i] @ c)
        return np.array(out)

    public = offsets_for(PLATOON_SPEED)
    k_brake = int(round(brake_time_s / dt))

    def actual(k: int) -> np.ndarray:
        if k < k_brake:
            return public
        if not np.isfinite(decel):
            return offsets_for(0.0)
        return offsets_for(max(0.0, PLATOON_SPEED - decel * (k - k_brake) * dt))

    law = law_for_models(pm.agents, F_abs, public)
    if cost is None:
        cost = BRAKE_COSTS.get(kind, 10.0)
    return Scenario("platoon3-brake", pm.agents, law, TriggerConfig(kind, M, cost), p_drop=p_drop,
                    horizon=int(round(horizon_s / dt)), dt=dt, relative_transform=pm.transform,
                    x_des_rel=None, gap_indices=tuple(pm.gap_indices), actual_offsets=actual,
                    meta={"brake_step": k_brake, "decel": decel, "lqr_Q": 1.0, "lqr_R": 1000.0}).validate()


BUILTINS = {"example1": example1, "platoon10": platoon10, "platoon3-brake": platoon3_brake}


# JSON ingestion ------------------------------------------------------------

_TOP_KEYS = {"schema", "name", "builtin", "agents", "control", "trigger", "p_drop", "horizon", "dt",
             "allow_unstable"}
_BUILTIN_OVERRIDES = {"schema", "name", "builtin", "trigger", "p_drop", "horizon"}
_AGENT_KEYS = {"A", "B", "H", "Q", "R", "x0", "X0", "process_noise", "measurement_noise"}
_NOISE_KEYS = {"kind", "shaping", "halfwidth"}
_CONTROL_KEYS = {"gain", "offsets", "lqr"}
_LQR_KEYS = {"Q", "R"}
_TRIGGER_KEYS = {"kind", "M", "cost", "cost_grid", "m_cap"}


def _strict(obj, allowed: set, where: str) -> dict:
    if not isinstance(obj, dict):
        raise ConfigurationError(f"{where}: expected an object")
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ConfigurationError(f"{where}: unknown key {unknown[0]!r} (allowed: {', '.join(sorted(allowed))})")
    return obj


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise ConfigurationError(f"{where}: missing required key {key!r}")
    return obj[key]


def _noise(spec, where: str) -> Optional[NoiseSpec]:
    if spec is None:
        return None
    _strict(spec, _NOISE_KEYS, where)
    return NoiseSpec(_require(spec, "kind", where), np.asarray(_require(spec, "shaping", where), dtype=float),
                     float(spec.get("halfwidth", 1.0)))


def _agent(spec: dict, where: str) -> LinearModel:
    _strict(spec, _AGENT_KEYS, where)
    A = np.atleast_2d(np.asarray(_require(spec, "A", where), dtype=float))
    B = np.asarray(spec.get("B", np.zeros((A.shape[0], 0))), dtype=float)
    pn = _noise(spec.get("process_noise"), f"{where}.process_noise")
    mn = _noise(spec.get("measurement_noise"), f"{where}.measurement_noise")
    Q = spec.get("Q", None if pn is None else pn.covariance)
    R = spec.get("R", None if mn is None else mn.covariance)
    if Q is None or R is None:
        raise ConfigurationError(f"{where}: noise covariances Q and R are required")
    try:
        return LinearModel(A, B, _require(spec, "H", where), Q, R, _require(spec, "x0", where),
                           _require(spec, "X0", where), pn, mn)
    except (ConfigurationError, DimensionError) as exc:
        raise type(exc)(f"{where}: {exc}") from exc


def _trigger(spec, where: str, base: Optional[TriggerConfig] = None) -> TriggerConfig:
    base = base or TriggerConfig()
    if spec is None:
        return base
    _strict(spec, _TRIGGER_KEYS, where)
    return TriggerConfig(spec.get("kind", base.kind), int(spec.get("M", base.M)), float(spec.get("cost", base.cost)),
                         tuple(float(c) for c in spec.get("cost_grid", base.cost_grid)),
                         int(spec.get("m_cap", base.m_cap)))


def scenario_from_dict(cfg: dict) -> Scenario:
    _strict(cfg, _TOP_KEYS, "scenario")
    if _require(cfg, "schema", "scenario") != SCHEMA_VERSION:
        raise ConfigurationError(f"scenario: unsupported schema {cfg['schema']!r}, expected {SCHEMA_VERSION}")
    if "builtin" in cfg:
        _strict(cfg, _BUILTIN_OVERRIDES, "scenario (builtin)")
        name = cfg["builtin"]
        if name not in BUILTINS:
            raise ConfigurationError(f"scenario.builtin: unknown scenario {name!r}")
        sc = BUILTINS[name]()
        sc.trigger = _trigger(cfg.get("trigger"), "scenario.trigger", sc.trigger)
        sc.p_drop = float(cfg.get("p_drop", sc.p_drop))
        sc.horizon = int(cfg.get("horizon", sc.horizon))
        sc.name = cfg.get("name", sc.name)
        return sc.validate()

    agents = [_agent(a, f"scenario.agents[{i}]") for i, a in enumerate(_require(cfg, "agents", "scenario"))]
    law = None
    if "control" in cfg:
        ctl = _strict(cfg["control"], _CONTROL_KEYS, "scenario.control")
        if ("gain" in ctl) == ("lqr" in ctl):
            raise ConfigurationError("scenario.control: give exactly one of 'gain' or 'lqr'")
        if "gain" in ctl:
            law = law_for_models(agents, np.asarray(ctl["gain"], dtype=float), ctl.get("offsets"))
        else:
            w = _strict(ctl["lqr"], _LQR_KEYS, "scenario.control.lqr")
            A = block_diag(*[m.A for m in agents])
            B = block_diag(*[m.B for m in agents])
            F = solve_lqr(A, B, float(_require(w, "Q", "lqr")) * np.eye(A.shape[0]),
                          float(_require(w, "R", "lqr")) * np.eye(B.shape[1]))
            law = law_for_models(agents, F, ctl.get("offsets"))
    sc = Scenario(cfg.get("name", "custom"), agents, law, _trigger(cfg.get("trigger"), "scenario.trigger"),
                  p_drop=float(cfg.get("p_drop", 0.0)), horizon=int(cfg.get("horizon", 200)),
                  dt=float(cfg.get("dt", 1.0)), allow_unstable=bool(cfg.get("allow_unstable", False)))
    return sc.validate()


def load_scenario(path) -> Scenario:
    """Load a built-in by name or a JSON scenario file."""
    if str(path) in BUILTINS:
        return BUILTINS[str(path)]()
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"{path}: cannot read scenario ({exc.strerror})") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    try:
        return scenario_from_dict(cfg)
    except (ConfigurationError, DimensionError) as exc:
        raise type(exc)(f"{path}: {exc}") from exc


# output --------------------------------------------------------------------

FLOAT_FMT = "%.12g"
SWEEP_COLUMNS = ("C", "comm_avg", "err_avg", "err_std", "runs", "comm_std", "perf_avg", "perf_std", "crash_frac")
ALLOCATION_COLUMNS = ("round", "agent", "decided_at", "lead_time", "note")


def trace_columns(trace) -> list[str]:
    D = trace.x.shape[-1]
    cols = ["k", "agent"]
    for pre in ("x_true", "x_hat", "x_check", "e", "e_hat"):
        cols += [f"{pre}_{d}" for d in range(D)]
    return cols + ["gamma", "E_bar", "E_mean", "E_var", "ell", "kappa"]


def trace_rows(trace, run: int = 0) -> list[dict]:
    """One row per (step, agent); state columns hold that agent's block, zero padded."""
    cols = trace_columns(trace)
    rows = []
    K = trace.x.shape[1] - 1
    D = trace.x.shape[-1]
    for k in range(K + 1):
        for i, sl in enumerate(trace.state_slices):
            row = {"k": k, "agent": i}
            for pre, arr in (("x_true", trace.x), ("x_hat", trace.x_hat), ("x_check", trace.x_check),
                             ("e", trace.e), ("e_hat", trace.e_hat)):
                block = arr[run, k, sl]
                for d in range(D):
                    row[f"{pre}_{d}"] = float(block[d]) if d < block.size else 0.0
            row.update(gamma=int(trace.gamma[run, k, i]), E_bar=float(trace.E_bar[run, k, i]),
                       E_mean=float(trace.E_mean[run, k, i]), E_var=float(trace.E_var[run, k, i]),
                       ell=int(trace.ell[run, k, i]), kappa=int(trace.kappa[run, k, i]))
            rows.append({c: row[c] for c in cols})
    return rows


def _table(obj) -> tuple[list[str], list[dict]]:
    if hasattr(obj, "points"):
        return list(SWEEP_COLUMNS), obj.rows()
    if hasattr(obj, "state_slices"):
        return trace_columns(obj), trace_rows(obj)
    rows = list(obj)
    if rows and set(rows[0]) == set(ALLOCATION_COLUMNS):
        return list(ALLOCATION_COLUMNS), rows
    if not rows:
        return list(ALLOCATION_COLUMNS), rows
    return list(rows[0]), rows


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % v
    return v


def _json_value(v):
    if isinstance(v, (float, np.floating)):
        return None if np.isnan(v) else float(FLOAT_FMT % v)
    return v


def emit_outputs(obj, path, fmt: str = "csv") -> Path:
    """Write a trace, sweep summary or allocation log as CSV or JSON."""
    cols, rows = _table(obj)
    path = Path(path)
    try:
        if fmt == "csv":
            with path.open("w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=cols)
                w.writeheader()
                for r in rows:
                    w.writerow({c: _fmt(r[c]) for c in cols})
        elif fmt == "json":
            payload = [{c: _json_value(r[c]) for c in cols} for r in rows]
            path.write_text(json.dumps({"columns": cols, "rows": payload}, indent=1))
        else:
            raise ConfigurationError(f"unknown output format {fmt!r}")
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc
    return path


def read_table(path) -> list[dict]:
    """Read back a CSV or JSON table written by emit_outputs (numbers parsed)."""
    path = Path(path)
    if path.suffix == ".json":
        return json.loads(path.read_text())["rows"]
    out = []
    with path.open(newline="") as fh:
        for r in csv.DictReader(fh):
            out.append({k: _parse(v) for k, v in r.items()})
    return out


def _parse(v: str):
    try:
        return int(v)
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        return v
