"""Local Kalman filter, M-step prediction and the data-independent variance schedule."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import ContractError, DimensionError, NumericalError
from .numerics import as_matrix, symmetrize
from .plant import LinearModel


@dataclass(frozen=True)
class GaussianBelief:
    """Mean and covariance at step ``k``; ``mean`` may carry a leading batch axis."""

    mean: np.ndarray
    cov: np.ndarray
    k: int = 0


def open_loop_variance(P, model: LinearModel) -> np.ndarray:
    P = as_matrix(P, "P")
    if P.shape != model.A.shape:
        raise DimensionError(f"P has shape {P.shape}, model state dimension is {model.n}")
    return symmetrize(model.A @ P @ model.A.T + model.Q)


def innovation_variance(P_prev, model: LinearModel) -> np.ndarray:
    """Covariance of y_k - H x_{k|k-1} given the posterior variance at k-1."""
    prior = open_loop_variance(P_prev, model)
    return symmetrize(model.H @ prior @ model.H.T + model.R)


def _gain(prior: np.ndarray, model: LinearModel):
    S = symmetrize(model.H @ prior @ model.H.T + model.R)
    try:
        c = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("innovation covariance is not positive definite") from exc
    HP = model.H @ prior
    L = np.linalg.solve(c.T, np.linalg.solve(c, HP)).T
    return L, S


def _correct(prior: np.ndarray, L: np.ndarray, model: LinearModel) -> np.ndarray:
    I_LH = np.eye(model.n) - L @ model.H
    return symmetrize(I_LH @ prior @ I_LH.T + L @ model.R @ L.T)


def _reshape(a, batch, d, name):
    a = np.asarray(a, dtype=float)
    if a.size != int(np.prod(batch, dtype=int)) * d:
        raise DimensionError(f"{name} has shape {a.shape}, expected {(*batch, d)}")
    return a.reshape(*batch, d)


def kf_step(belief: GaussianBelief, u, y, model: LinearModel) -> GaussianBelief:
    """Predict with (A, B, u_{k-1}) and correct with y_k.

    ``belief.mean`` of shape (n,) or (runs, n); ``u`` and ``y`` follow the same
    leading shape. The covariance is shared across the batch.
    """
    x = np.asarray(belief.mean, dtype=float)
    if x.shape[-1] != model.n:
        raise DimensionError(f"belief mean has trailing dimension {x.shape[-1]}, expected {model.n}")
    batch = x.shape[:-1]
    prior_mean = x @ model.A.T
    if model.p and u is not None:
        prior_mean = prior_mean + _reshape(u, batch, model.p, "input") @ model.B.T
    y = _reshape(y, batch, model.m, "measurement")
    prior = open_loop_variance(belief.cov, model)
    L, _ = _gain(prior, model)
    mean = prior_mean + (y - prior_mean @ model.H.T) @ L.T
    return GaussianBelief(mean, _correct(prior, L, model), belief.k + 1)


def predict_m_steps(belief: GaussianBelief, future_xi: Sequence, F, M: int, model: LinearModel) -> GaussianBelief:
    """Closed-loop mean and open-loop variance ``M`` steps ahead of ``belief``."""
    if M < 0:
        raise ContractError("prediction horizon must be non-negative")
    future_xi = list(future_xi)
    if future_xi and len(future_xi) != M:
        raise ContractError(f"expected {M} future xi entries, got {len(future_xi)}")
    Abar = model.closed_loop(F)
    mean = np.asarray(belief.mean, dtype=float)
    P = as_matrix(belief.cov)
    for m in range(M):
        mean = mean @ Abar.T
        if future_xi and model.p:
            mean = mean + np.asarray(future_xi[m], dtype=float) @ model.B.T
        P = open_loop_variance(P, model)
    return GaussianBelief(mean, P, belief.k + M)


ModelSource = Union[LinearModel, Callable[[int], LinearModel]]


class VarianceSchedule:
    """Lazily extended posterior/prior/gain/innovation sequences of one agent.

    Step 0 holds the initial variance. ``model_at(k)`` is the model used for the
    transition into step ``k`` and the measurement at ``k``; pass a plain
    LinearModel for the time-invariant case. ``F`` is the agent's own feedback
    gain, needed for the input-uncertainty term.
    """

    def __init__(self, model: ModelSource, F=None, P0=None):
        self._model_at = model if callable(model) and not isinstance(model, LinearModel) else (lambda k, m=model: m)
        m0 = self._model_at(0)
        self.n = m0.n
        self.F = None if F is None or m0.p == 0 else as_matrix(F).reshape(m0.p, m0.n)
        self._post = [as_matrix(m0.X0 if P0 is None else P0)]
        self._prior = [None]
        self._gain = [None]
        self._innov = [None]
        self._horizon_cache: dict[int, list] = {}

    def model(self, k: int) -> LinearModel:
        return self._model_at(k)

    def fork(self, model: ModelSource, upto: int) -> "VarianceSchedule":
        """Copy of this schedule through step ``upto`` that continues with another model source."""
        self.extend(upto)
        new = VarianceSchedule(model, self.F, self._post[0])
        new._post = self._post[: upto + 1]
        new._prior = self._prior[: upto + 1]
        new._gain = self._gain[: upto + 1]
        new._innov = self._innov[: upto + 1]
        return new

    def extend(self, k: int) -> None:
        while len(self._post) <= k:
            j = len(self._post)
            mdl = self._model_at(j)
            prior = open_loop_variance(self._post[-1], mdl)
            L, S = _gain(prior, mdl)
            self._prior.append(prior)
            self._gain.append(L)
            self._innov.append(S)
            self._post.append(_correct(prior, L, mdl))

    def _get(self, seq, k):
        if k < 0:
            raise ContractError(f"negative step index {k}")
        self.extend(k)
        return seq[k]

    def posterior(self, k: int) -> np.ndarray:
        return self._get(self._post, k)

    def prior(self, k: int) -> np.ndarray:
        if k < 1:
            raise ContractError("prior variance starts at step 1")
        return self._get(self._prior, k)

    def gain(self, k: int) -> np.ndarray:
        if k < 1:
            raise ContractError("gain starts at step 1")
        return self._get(self._gain, k)

    def innovation(self, k: int) -> np.ndarray:
        if k < 1:
            raise ContractError("innovation variance starts at step 1")
        return self._get(self._innov, k)

    def _closed_loop_input(self, mdl: LinearModel) -> np.ndarray:
        if self.F is None or mdl.p == 0:
            return np.zeros((self.n, self.n))
        return mdl.B @ self.F

    def horizon(self, k: int, M: int) -> list:
        """Entries ``(P_{k+m|k}, Cov_m)`` for m = 0..M, cached per anchor ``k``.

        ``Cov_m`` is the joint covariance of the open-loop prediction
        ``x_{k+m|k}`` (first block) and the posterior mean ``x_{k+m}`` (second
        block) given data up to ``k``.
        """
        rows = self._horizon_cache.setdefault(k, [])
        if not rows:
            rows.append((self.posterior(k), np.zeros((2 * self.n, 2 * self.n))))
        n = self.n
        while len(rows) <= M:
            m = len(rows)
            mdl = self._model_at(k + m)
            P_pred, cov = rows[-1]
            BF = self._closed_loop_input(mdl)
            T = np.block([[mdl.A, BF], [np.zeros((n, n)), mdl.A + BF]])
            L = self.gain(k + m)
            noise = np.zeros((2 * n, 2 * n))
            noise[n:, n:] = L @ self.innovation(k + m) @ L.T
            rows.append((open_loop_variance(P_pred, mdl), symmetrize(T @ cov @ T.T + noise)))
        return rows

    def predicted(self, k: int, M: int) -> np.ndarray:
        return self.horizon(k, M)[M][0]

    def xi(self, k: int, M: int) -> np.ndarray:
        """Input-uncertainty term via the joint recursion; zero for M <= 1."""
        return self.horizon(k, M)[M][1][: self.n, : self.n]

    def posterior_mean_spread(self, k: int, M: int) -> np.ndarray:
        return self.horizon(k, M)[M][1][self.n :, self.n :]

    def variance_term(self, k: int, M: int) -> float:
        return float(np.trace(self.predicted(k, M) + self.xi(k, M) - self.posterior(k + M)))

    def forget_before(self, k: int) -> None:
        """Drop cached horizons anchored before ``k`` to bound memory on long runs."""
        for key in [key for key in self._horizon_cache if key < k]:
            del self._horizon_cache[key]


def check_schedule(schedule: VarianceSchedule, upto: int, atol: float = 1e-12) -> Optional[int]:
    """Return the first step whose entries do not follow the KF recursion, or None."""
    for k in range(1, upto + 1):
        mdl = schedule.model(k)
        prior = open_loop_variance(schedule.posterior(k - 1), mdl)
        L, S = _gain(prior, mdl)
        post = _correct(prior, L, mdl)
        for a, b in ((prior, schedule.prior(k)), (L, schedule.gain(k)), (S, schedule.innovation(k)),
                     (post, schedule.posterior(k))):
            if not np.allclose(a, b, atol=atol, rtol=0):
                return k
    return None
