"""Coordinated linear feedback over local estimates and peer predictions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.linalg import block_diag

from .errors import ContractError, DimensionError
from .numerics import as_matrix, solve_lqr, spectral_radius
from .plant import LinearModel
from .remote_predictor import RemoteEstimate


@dataclass(frozen=True)
class ControlLaw:
    """Gain blocks ``gains[i][j]`` (p_i x n_j) and constant input offsets ``offsets[i]``.

    Agent i applies u_i = F_ii x_hat_i + xi_i with
    xi_i = sum_{j != i} F_ij x_check_j + offsets[i].
    """

    gains: tuple
    offsets: tuple
    state_dims: tuple
    input_dims: tuple

    @property
    def N(self) -> int:
        return len(self.state_dims)

    def own_gain(self, i: int) -> np.ndarray:
        return self.gains[i][i]

    def stacked(self) -> np.ndarray:
        return np.block([[self.gains[i][j] for j in range(self.N)] for i in range(self.N)])

    def stacked_offsets(self) -> np.ndarray:
        return np.concatenate([np.asarray(o, dtype=float) for o in self.offsets]) if self.N else np.zeros(0)

    def with_offsets(self, offsets) -> "ControlLaw":
        return make_law_from_stacked(self.stacked(), self.state_dims, self.input_dims, offsets)


def _splits(dims):
    return np.cumsum((0, *dims))


def make_law_from_stacked(F, state_dims: Sequence[int], input_dims: Sequence[int], offsets=None) -> ControlLaw:
    F = as_matrix(F, "F")
    rs, cs = _splits(input_dims), _splits(state_dims)
    if F.shape != (rs[-1], cs[-1]):
        raise DimensionError(f"stacked gain {F.shape} does not match dims {tuple(input_dims)}x{tuple(state_dims)}")
    N = len(state_dims)
    gains = tuple(tuple(F[rs[i]:rs[i + 1], cs[j]:cs[j + 1]].copy() for j in range(N)) for i in range(N))
    if offsets is None:
        offs = tuple(np.zeros(p) for p in input_dims)
    else:
        offsets = np.asarray(offsets, dtype=float).ravel()
        if offsets.shape != (rs[-1],):
            raise DimensionError(f"offsets have shape {offsets.shape}, expected ({rs[-1]},)")
        offs = tuple(offsets[rs[i]:rs[i + 1]].copy() for i in range(N))
    return ControlLaw(gains, offs, tuple(int(d) for d in state_dims), tuple(int(p) for p in input_dims))


def law_for_models(models: Sequence[LinearModel], F, offsets=None) -> ControlLaw:
    return make_law_from_stacked(F, [m.n for m in models], [m.p for m in models], offsets)


def lqr_law(models: Sequence[LinearModel], Q, R) -> ControlLaw:
    """LQR on the stacked (uncoupled) ensemble of the given agent models."""
    A = block_diag(*[m.A for m in models])
    B = block_diag(*[m.B for m in models])
    return law_for_models(models, solve_lqr(A, B, Q, R))


def aggregate_xi(agent: int, peer_estimates: Mapping, law: ControlLaw) -> np.ndarray:
    """Peer part of agent ``agent``'s input plus its offset."""
    xi = np.array(law.offsets[agent], dtype=float)
    for j in range(law.N):
        if j == agent:
            continue
        Fij = law.gains[agent][j]
        if not np.any(Fij):
            continue
        if j not in peer_estimates:
            raise ContractError(f"agent {agent} needs a remote estimate of agent {j}")
        est = peer_estimates[j]
        x = est.mean if isinstance(est, RemoteEstimate) else est
        xi = xi + Fij @ np.asarray(x, dtype=float)
    return xi


def control_input(x_hat, xi, F_i, x_des=None) -> np.ndarray:
    F_i = as_matrix(F_i, "F_i")
    x = np.atleast_1d(np.asarray(x_hat, dtype=float))
    if x.shape[-1] != F_i.shape[1]:
        raise DimensionError(f"gain {F_i.shape} does not act on state of size {x.shape[-1]}")
    if x_des is not None:
        x = x - np.asarray(x_des, dtype=float)
    u = x @ F_i.T
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1:] != u.shape[-1:]:
        raise DimensionError(f"xi has shape {xi.shape}, input has {u.shape}")
    return u + xi


def assemble_closed_loop(models: Sequence[LinearModel], law: ControlLaw):
    """Return (A~ + B~F~, D~, B~F~ - D~) of the stacked ensemble."""
    if len(models) != law.N:
        raise DimensionError(f"{len(models)} models for a law over {law.N} agents")
    for m, n, p in zip(models, law.state_dims, law.input_dims):
        if (m.n, m.p) != (n, p):
            raise DimensionError("model dimensions disagree with the control law")
    At = block_diag(*[m.A for m in models])
    Bt = block_diag(*[m.B for m in models])
    BF = Bt @ law.stacked()
    D = block_diag(*[m.B @ law.own_gain(i) for i, m in enumerate(models)])
    return At + BF, D, BF - D


def closed_loop_radius(models: Sequence[LinearModel], law: ControlLaw) -> float:
    return spectral_radius(assemble_closed_loop(models, law)[0])


def input_matrix(models: Sequence[LinearModel]) -> np.ndarray:
    return block_diag(*[m.B for m in models])


def reconstruct_step(x_prev, e_hat_prev, e_prev, v_prev, models: Sequence[LinearModel], law: ControlLaw,
                     offsets: Optional[np.ndarray] = None) -> np.ndarray:
    """Ensemble-form one-step map used to cross-check simulated trajectories."""
    Acl, D, C = assemble_closed_loop(models, law)
    out = Acl @ x_prev - D @ e_hat_prev - C @ e_prev + v_prev
    r = law.stacked_offsets() if offsets is None else offsets
    if r.size:
        out = out + input_matrix(models) @ r
    return out
