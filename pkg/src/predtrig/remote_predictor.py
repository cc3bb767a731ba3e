"""Model-based prediction of a peer's state between received updates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionError


@dataclass(frozen=True)
class RemoteEstimate:
    mean: np.ndarray
    k: int
    agent: int = 0


def remote_step(est: RemoteEstimate, xi, received=None, *, Abar, B=None) -> RemoteEstimate:
    """Advance one step: reset to ``received`` if given, else x <- Abar x + B xi."""
    x = np.asarray(est.mean, dtype=float)
    if received is not None:
        r = np.asarray(received, dtype=float)
        if r.shape != x.shape:
            raise DimensionError(f"received estimate has shape {r.shape}, expected {x.shape}")
        return RemoteEstimate(r.copy(), est.k + 1, est.agent)
    Abar = np.atleast_2d(np.asarray(Abar, dtype=float))
    if Abar.shape != (x.shape[-1], x.shape[-1]):
        raise DimensionError(f"closed-loop matrix {Abar.shape} does not match state {x.shape}")
    nxt = x @ Abar.T
    if B is not None and np.size(B):
        B = np.asarray(B, dtype=float).reshape(x.shape[-1], -1)
        xi = np.asarray(xi, dtype=float)
        if xi.shape[-1:] != (B.shape[1],):
            xi = xi.reshape(*x.shape[:-1], B.shape[1])
        nxt = nxt + xi @ B.T
    return RemoteEstimate(nxt, est.k + 1, est.agent)


def predicted_mean(x_check_prev: np.ndarray, xi_prev: Optional[np.ndarray], Abar: np.ndarray,
                   B: Optional[np.ndarray]) -> np.ndarray:
    """Abar x + B xi without bookkeeping; also the no-reception branch of remote_step."""
    out = np.asarray(x_check_prev, dtype=float) @ np.asarray(Abar).T
    if B is not None and np.size(B) and xi_prev is not None:
        out = out + np.asarray(xi_prev, dtype=float) @ np.asarray(B).reshape(out.shape[-1], -1).T
    return out
