"""True process simulation: linear models, noise sources and the platoon model.

Platoon conventions
-------------------
Vehicle 1 leads. Each vehicle is an agent with the decoupled point-mass
state ``[v_i, s_i]`` (velocity, absolute position) and measures ``s_i``.
The control/analysis state stacks ``[v_1, d_1, v_2, d_2, ..., v_N]`` with
the gap ``d_i = s_i - s_{i+1}`` to the follower, so the last vehicle has no
gap entry and the stacked dimension is ``2N - 1``. ``PlatoonModel.to_relative``
maps the stacked absolute states to that ordering.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, DimensionError
from .numerics import as_matrix, as_vector, is_symmetric_psd, psd_sqrt

GAUSSIAN = "gaussian"
UNIFORM = "uniform"


@dataclass(frozen=True)
class NoiseSpec:
    """Noise ``G @ eta`` with ``eta`` i.i.d. standard Gaussian or Uniform[-a, a]."""

    kind: str
    shaping: np.ndarray
    halfwidth: float = 1.0

    def __post_init__(self):
        if self.kind not in (GAUSSIAN, UNIFORM):
            raise ConfigurationError(f"unknown noise kind {self.kind!r}")
        object.__setattr__(self, "shaping", as_matrix(self.shaping, "shaping"))
        if self.kind == UNIFORM and not self.halfwidth > 0:
            raise ConfigurationError("uniform noise needs a positive halfwidth")

    @property
    def dim(self) -> int:
        return self.shaping.shape[1]

    @property
    def eta_variance(self) -> float:
        return 1.0 if self.kind == GAUSSIAN else self.halfwidth**2 / 3.0

    @property
    def covariance(self) -> np.ndarray:
        return self.eta_variance * self.shaping @ self.shaping.T

    def sample_eta(self, rng: np.random.Generator, size) -> np.ndarray:
        shape = (*np.atleast_1d(size), self.dim) if size is not None else (self.dim,)
        if self.kind == GAUSSIAN:
            return rng.standard_normal(shape)
        return rng.uniform(-self.halfwidth, self.halfwidth, shape)

    def apply(self, eta: np.ndarray) -> np.ndarray:
        return eta @ self.shaping.T


def gaussian_noise(cov) -> NoiseSpec:
    return NoiseSpec(GAUSSIAN, psd_sqrt(cov))


@dataclass(frozen=True)
class LinearModel:
    """x_k = A x_{k-1} + B u_{k-1} + v_{k-1},  y_k = H x_k + w_k."""

    A: np.ndarray
    B: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    x0_mean: np.ndarray
    X0: np.ndarray
    process_noise: Optional[NoiseSpec] = None
    measurement_noise: Optional[NoiseSpec] = None

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        n = A.shape[0]
        B = np.asarray(self.B, dtype=float)
        B = B.reshape(n, -1) if B.size else np.zeros((n, 0))
        H = as_matrix(self.H, "H")
        Q, R, X0 = as_matrix(self.Q, "Q"), as_matrix(self.R, "R"), as_matrix(self.X0, "X0")
        x0 = as_vector(self.x0_mean, "x0_mean")
        m = H.shape[0]
        if A.shape != (n, n) or H.shape[1] != n or Q.shape != (n, n) or R.shape != (m, m):
            raise DimensionError(f"inconsistent model shapes A{A.shape} B{B.shape} H{H.shape} Q{Q.shape} R{R.shape}")
        if x0.shape != (n,) or X0.shape != (n, n):
            raise DimensionError(f"initial belief shapes x0{x0.shape} X0{X0.shape} do not match n={n}")
        for name, M in (("Q", Q), ("R", R), ("X0", X0)):
            if not is_symmetric_psd(M):
                raise ConfigurationError(f"{name} must be symmetric positive semidefinite")
        pn = self.process_noise or gaussian_noise(Q)
        mn = self.measurement_noise or gaussian_noise(R)
        if pn.shaping.shape[0] != n or mn.shaping.shape[0] != m:
            raise DimensionError("noise shaping matrices do not match state/measurement dimensions")
        if not np.allclose(pn.covariance, Q, atol=1e-12) or not np.allclose(mn.covariance, R, atol=1e-12):
            raise ConfigurationError("noise specification disagrees with Q/R")
        for name, val in (("A", A), ("B", B), ("H", H), ("Q", Q), ("R", R), ("x0_mean", x0), ("X0", X0),
                          ("process_noise", pn), ("measurement_noise", mn)):
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.B.shape[1]

    @property
    def m(self) -> int:
        return self.H.shape[0]

    def closed_loop(self, F) -> np.ndarray:
        """A + B F, or A when there is no input channel or gain."""
        if F is None or self.p == 0:
            return self.A
        return self.A + self.B @ as_matrix(F).reshape(self.p, self.n)

    @classmethod
    def from_noise(cls, A, B, H, process: NoiseSpec, measurement: NoiseSpec, x0_mean, X0) -> "LinearModel":
        return cls(A, B, H, process.covariance, measurement.covariance, x0_mean, X0, process, measurement)


class NoiseSource:
    """Seeded stream of noise samples; one per run, never shared between threads."""

    def __init__(self, seed=None):
        self.rng = np.random.default_rng(seed)

    def draw(self, spec: NoiseSpec, size=None) -> np.ndarray:
        return spec.apply(spec.sample_eta(self.rng, size))

    def uniform(self, size=None) -> np.ndarray:
        return self.rng.random(size)


def _check_vec(v, n, name):
    v = as_vector(v, name)
    if v.shape != (n,):
        raise DimensionError(f"{name} has shape {v.shape}, expected ({n},)")
    return v


def step_true_state(x, u, model: LinearModel, noise: Optional[NoiseSource] = None, k: int | None = None,
                    v=None) -> np.ndarray:
    """Advance the true state one step. ``v`` forces the process noise sample."""
    x = _check_vec(x, model.n, "x")
    if model.p:
        u = _check_vec(np.zeros(model.p) if u is None else u, model.p, "u")
        drift = model.A @ x + model.B @ u
    else:
        drift = model.A @ x
    if v is None:
        v = noise.draw(model.process_noise) if noise is not None else np.zeros(model.n)
    return drift + _check_vec(v, model.n, "v")


def measure(x, model: LinearModel, noise: Optional[NoiseSource] = None, k: int | None = None, w=None) -> np.ndarray:
    x = _check_vec(x, model.n, "x")
    if w is None:
        w = noise.draw(model.measurement_noise) if noise is not None else np.zeros(model.m)
    return model.H @ x + _check_vec(w, model.m, "w")


@dataclass(frozen=True)
class SurfaceChange:
    """Road-surface switch once the lead vehicle passes ``threshold`` metres."""

    threshold: float = 200.0
    speed_factor: float = 1.5
    input_factor: float = 0.5


def _vehicle_matrices(dt: float, speed: float = 1.0, gain: float = 1.0):
    A = np.array([[1.0, 0.0], [speed * dt, 1.0]])
    B = gain * np.array([[dt], [speed * dt * dt / 2.0]])
    return A, B


def relative_platoon_matrices(N: int, dt: float, speed: float = 1.0, gain: float = 1.0):
    """Stacked gap/velocity model ``[v_1, d_1, ..., v_N]`` under zero-order hold."""
    D = 2 * N - 1
    A = np.eye(D)
    B = np.zeros((D, N))
    for i in range(N):
        B[2 * i, i] = gain * dt
        if i < N - 1:
            A[2 * i + 1, 2 * i] = speed * dt
            A[2 * i + 1, 2 * i + 2] = -speed * dt
            B[2 * i + 1, i] = gain * speed * dt * dt / 2.0
            B[2 * i + 1, i + 1] = -gain * speed * dt * dt / 2.0
    return A, B


@dataclass
class PlatoonModel:
    N: int
    dt: float
    agents: list[LinearModel]
    switched_agents: Optional[list[LinearModel]]
    transform: np.ndarray  # (2N-1) x 2N, absolute stack -> relative stack
    A_rel: np.ndarray
    B_rel: np.ndarray
    A_rel_switched: Optional[np.ndarray] = None
    B_rel_switched: Optional[np.ndarray] = None
    surface: Optional[SurfaceChange] = None
    lead_position_index: int = 1
    gap_indices: list[int] = field(default_factory=list)

    def to_relative(self, x_abs: np.ndarray) -> np.ndarray:
        return x_abs @ self.transform.T


def platoon_transform(N: int) -> np.ndarray:
    T = np.zeros((2 * N - 1, 2 * N))
    for i in range(N):
        T[2 * i, 2 * i] = 1.0
        if i < N - 1:
            T[2 * i + 1, 2 * i + 1] = 1.0
            T[2 * i + 1, 2 * i + 3] = -1.0
    return T


def build_platoon_model(N: int, dt: float = 0.1, surface_rule: Optional[SurfaceChange] = None, *,
                        v0: float = 22.2, gap0: float = 10.0, input_noise: float = 0.1,
                        position_noise: float = 0.1, X0=None) -> PlatoonModel:
    """Per-vehicle point-mass agents plus the stacked relative model used for design."""
    if N < 2:
        raise ConfigurationError("a platoon needs at least two vehicles")
    if not dt > 0:
        raise ConfigurationError("sample time must be positive")
    X0 = np.diag([1e-4, 1e-4]) if X0 is None else as_matrix(X0)
    H = np.array([[0.0, 1.0]])
    meas = NoiseSpec(UNIFORM, np.ones((1, 1)), position_noise)

    def agents_for(speed, gain):
        A, B = _vehicle_matrices(dt, speed, gain)
        proc = NoiseSpec(UNIFORM, B, input_noise)
        return [LinearModel.from_noise(A, B, H, proc, meas, [v0, -gap0 * i], X0) for i in range(N)]

    A_rel, B_rel = relative_platoon_matrices(N, dt)
    model = PlatoonModel(N, dt, agents_for(1.0, 1.0), None, platoon_transform(N), A_rel, B_rel,
                         gap_indices=[2 * i + 1 for i in range(N - 1)])
    if surface_rule is not None:
        s, g = surface_rule.speed_factor, surface_rule.input_factor
        model.switched_agents = agents_for(s, g)
        model.A_rel_switched, model.B_rel_switched = relative_platoon_matrices(N, dt, s, g)
        model.surface = surface_rule
    return model


ModelProvider = Callable[[int], LinearModel]
