"""Trigger laws and the error distributions they are built on.

Notation: ``k`` is the current step, ``M`` the prediction horizon, ``ell``
the last step with a fired trigger and ``kappa`` the last step (possibly in
the future) with a scheduled trigger. Decisions at step ``k`` use ``kappa``
as known at ``k - 1``.

All mean-term helpers accept a leading batch axis so the simulator can
evaluate many Monte Carlo runs at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import ContractError, InvariantViolation, TriggerCapExceeded
from .estimator import GaussianBelief, VarianceSchedule
from .numerics import as_matrix, symmetrize
from .plant import LinearModel
from .remote_predictor import RemoteEstimate, predicted_mean

Cost = Union[float, Sequence[float], Callable[[int], float]]

DEFAULT_M_CAP = 1000


def cost_at(cost: Cost, step: int) -> float:
    if callable(cost):
        return float(cost(step))
    if np.ndim(cost) == 0:
        return float(cost)
    seq = np.asarray(cost, dtype=float)
    if step >= len(seq):
        raise ContractError(f"cost sequence has no entry for step {step}")
    return float(seq[step])


@dataclass
class TriggerBook:
    """Decision history of one agent. Steps without an entry count as 0."""

    M: int = 0
    decisions: dict = field(default_factory=dict)
    decided_at: dict = field(default_factory=dict)

    def record(self, step: int, gamma: int, at: Optional[int] = None) -> None:
        gamma = int(bool(gamma))
        if step in self.decisions and self.decisions[step] != gamma:
            raise InvariantViolation(f"decision for step {step} already fixed to {self.decisions[step]}")
        self.decisions[step] = gamma
        self.decided_at.setdefault(step, step if at is None else at)

    def gamma(self, step: int) -> int:
        return self.decisions.get(step, 0)

    def _last_one(self, upto: int) -> int:
        ones = [s for s, g in self.decisions.items() if g and s <= upto]
        return max(ones, default=0)

    def last_fired(self, k: int) -> int:
        """ell_k: last trigger at or before k (0 before any trigger)."""
        return self._last_one(k)

    def last_scheduled(self, k: int) -> int:
        """kappa_k: last trigger at or before k + M."""
        return self._last_one(k + self.M)

    def case(self, k: int) -> tuple[str, int, int]:
        """('i' | 'ii', kappa_{k-1}, Delta) for a decision made at step k."""
        kappa = self.last_scheduled(k - 1)
        ell = self.last_fired(k - 1)
        if kappa < ell:
            raise InvariantViolation(f"kappa={kappa} precedes ell={ell}")
        if k > kappa:
            return "i", kappa, self.M
        delta = k + self.M - kappa
        if not 1 <= delta <= self.M:
            raise InvariantViolation(f"Delta={delta} outside [1, {self.M}]")
        return "ii", kappa, delta


@dataclass(frozen=True)
class ErrorDistribution:
    mean: np.ndarray
    cov: np.ndarray
    label: str


def g_sequence(model: LinearModel, F, m_max: int) -> list[np.ndarray]:
    """G_0 = B F, G_m = A G_{m-1} + B F Abar^m."""
    if m_max < 0:
        raise ContractError("m_max must be non-negative")
    n = model.n
    BF = np.zeros((n, n)) if F is None or model.p == 0 else model.B @ as_matrix(F).reshape(model.p, n)
    Abar = model.A + BF
    G = [BF]
    Apow = np.eye(n)
    for _ in range(m_max):
        Apow = Apow @ Abar
        G.append(model.A @ G[-1] + BF @ Apow)
    return G


def xi_term(k: int, M: int, schedule: VarianceSchedule, g: Sequence[np.ndarray]) -> np.ndarray:
    """Input-uncertainty covariance as an explicit sum over the G sequence."""
    if M < 0:
        raise ContractError("horizon must be non-negative")
    if M >= 2 and len(g) < M - 1:
        raise ContractError(f"G sequence has {len(g)} terms, need {M - 1}")
    out = np.zeros((schedule.n, schedule.n))
    for m in range(1, M):
        L = schedule.gain(k + m)
        G = g[M - m - 1]
        out += G @ L @ schedule.innovation(k + m) @ L.T @ G.T
    return symmetrize(out)


def error_dist_communicated(k: int, M: int, schedule: VarianceSchedule) -> ErrorDistribution:
    return ErrorDistribution(np.zeros(schedule.n), schedule.posterior(k + M), "c")


def _abar(schedule: VarianceSchedule, step: int) -> np.ndarray:
    return schedule.model(step).closed_loop(schedule.F)


def innovation_gap(x_hat, x_check_prev, xi_prev, schedule: VarianceSchedule, k: int) -> np.ndarray:
    """x_hat_k minus the remote prediction Abar x_check_{k-1} + B xi_{k-1}."""
    mdl = schedule.model(k)
    return np.asarray(x_hat, dtype=float) - predicted_mean(x_check_prev, xi_prev, _abar(schedule, k), mdl.B)


def propagate_gap(d: np.ndarray, k: int, M: int, schedule: VarianceSchedule) -> np.ndarray:
    """Apply Abar over steps k+1..k+M to the (batched) gap."""
    for m in range(1, M + 1):
        d = d @ _abar(schedule, k + m).T
    return d


def _remote_mean(remote) -> np.ndarray:
    return remote.mean if isinstance(remote, RemoteEstimate) else np.asarray(remote, dtype=float)


def error_dist_not_communicated(book: TriggerBook, k: int, kf_belief: GaussianBelief, remote,
                                xi_prev, schedule: VarianceSchedule) -> ErrorDistribution:
    """Predicted remote error at k+M if no trigger happens at k+M.

    ``remote`` is the remote estimate at k-1 (before this step's prediction).
    """
    case, kappa, delta = book.case(k)
    M = book.M
    if case == "ii":
        cov = schedule.predicted(kappa, delta) + schedule.xi(kappa, delta)
        return ErrorDistribution(np.zeros(schedule.n), symmetrize(cov), "nc")
    d = innovation_gap(kf_belief.mean, _remote_mean(remote), xi_prev, schedule, k)
    mean = propagate_gap(d, k, M, schedule)
    return ErrorDistribution(mean, symmetrize(schedule.predicted(k, M) + schedule.xi(k, M)), "nc")


def exact_nc_covariance(book: TriggerBook, k: int, schedule: VarianceSchedule) -> np.ndarray:
    """Conditional covariance of the no-communication error including the
    correlation between the open-loop prediction and future innovations.

    Coincides with the covariance of ``error_dist_not_communicated`` when the
    horizon is at most one step or the input channel is inactive.
    """
    case, kappa, delta = book.case(k)
    anchor, h = (kappa, delta) if case == "ii" else (k, book.M)
    return symmetrize(schedule.posterior(anchor + h) + schedule.posterior_mean_spread(anchor, h))


def expected_estimation_cost(dist_nc: ErrorDistribution, dist_c: ErrorDistribution) -> float:
    mean_nc = np.asarray(dist_nc.mean, dtype=float)
    mean_c = np.asarray(dist_c.mean, dtype=float)
    return float(mean_nc @ mean_nc - mean_c @ mean_c + np.trace(dist_nc.cov - dist_c.cov))


def st_next_trigger(ell: int, schedule: VarianceSchedule, cost: Cost, m_cap: int = DEFAULT_M_CAP,
                    book: Optional[TriggerBook] = None) -> int:
    """Smallest M >= 1 whose variance-only cost reaches C_{ell+M}.

    With ``book`` given, records zeros for ell+1..ell+M-1 and a one at ell+M.
    """
    if m_cap < 1:
        raise ContractError("m_cap must be at least 1")
    for M in range(1, m_cap + 1):
        if schedule.variance_term(ell, M) >= cost_at(cost, ell + M):
            if book is not None:
                for j in range(ell + 1, ell + M):
                    book.record(j, 0, at=ell)
                book.record(ell + M, 1, at=ell)
            return M
    raise TriggerCapExceeded(m_cap)


def pt_signal(book: TriggerBook, k: int, kf_belief: GaussianBelief, remote, xi_prev,
              schedule: VarianceSchedule) -> tuple[np.ndarray, float, str]:
    """(mean term, variance term, case) of the predictive trigger at step k.

    The mean term is batched over a leading axis of ``kf_belief.mean``.
    """
    case, kappa, delta = book.case(k)
    M = book.M
    if case == "ii":
        var = float(np.trace(schedule.predicted(kappa, delta) + schedule.xi(kappa, delta)
                             - schedule.posterior(kappa + delta)))
        return np.zeros(np.shape(kf_belief.mean)[:-1]), var, case
    d = innovation_gap(kf_belief.mean, _remote_mean(remote), xi_prev, schedule, k)
    d = propagate_gap(d, k, M, schedule)
    return np.sum(d * d, axis=-1), schedule.variance_term(k, M), case


def pt_decide(book: TriggerBook, k: int, kf_belief: GaussianBelief, remote, xi_prev,
              schedule: VarianceSchedule, cost: Cost) -> int:
    """Decide gamma_{k+M} at step k and record it in ``book``."""
    mean, var, _ = pt_signal(book, k, kf_belief, remote, xi_prev, schedule)
    gamma = int(float(mean + var) >= cost_at(cost, k + book.M))
    book.record(k + book.M, gamma, at=k)
    return gamma


def et_decide(kf_belief: GaussianBelief, remote, xi_prev, cost: float, schedule: VarianceSchedule,
              k: int) -> int:
    d = innovation_gap(kf_belief.mean, _remote_mean(remote), xi_prev, schedule, k)
    return int(float(np.sum(d * d, axis=-1) + 0.0) >= float(cost))


def signal_decomposition(book: TriggerBook, k: int, kf_belief: GaussianBelief, remote, xi_prev,
                         schedule: VarianceSchedule, kind: str = "pt") -> tuple[float, float]:
    """(E_mean, E_var) for logging. ST reports its variance-only signal anchored at ell."""
    if kind == "st":
        ell = book.last_fired(k)
        return 0.0, schedule.variance_term(ell, k - ell) if k > ell else 0.0
    mean, var, _ = pt_signal(book, k, kf_belief, remote, xi_prev, schedule)
    return float(mean), var
