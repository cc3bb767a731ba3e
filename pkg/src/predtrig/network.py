"""Synchronous broadcast bus with optional Bernoulli packet drops."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class BusRound:
    k: int
    senders: tuple
    delivered: np.ndarray  # (len(senders), N) bool; row s is sender senders[s]
    p_drop: float

    def received(self, sender: int, receiver: int) -> bool:
        return bool(self.delivered[self.senders.index(sender), receiver])


def delivery_bits(rng: np.random.Generator, shape, p_drop: float) -> np.ndarray:
    """Independent delivery bits; the last two axes are (sender, receiver).

    Self-delivery on the diagonal is always True.
    """
    if not 0.0 <= p_drop <= 1.0:
        raise ConfigurationError(f"drop probability {p_drop} outside [0, 1]")
    bits = rng.random(shape) >= p_drop
    n = min(shape[-2:])
    idx = np.arange(n)
    bits[..., idx, idx] = True
    return bits


def broadcast(k: int, senders: Iterable[int], N: int, p_drop: float, rng: np.random.Generator) -> BusRound:
    senders = tuple(sorted(set(int(s) for s in senders)))
    full = delivery_bits(rng, (N, N), p_drop)
    return BusRound(k, senders, full[list(senders), :] if senders else np.zeros((0, N), bool), float(p_drop))


INSTANTANEOUS = "instantaneous"


def allocation_log(books: Mapping, kind: str = "pt", horizon: int | None = None) -> list[dict]:
    """One row per used slot: (round, agent, decided_at, lead_time, note)."""
    rows = []
    for agent, book in sorted(books.items()):
        for step in sorted(book.decisions):
            if not book.decisions[step] or (horizon is not None and step > horizon):
                continue
            at = book.decided_at.get(step, step)
            rows.append({"round": step, "agent": agent, "decided_at": at, "lead_time": step - at,
                         "note": INSTANTANEOUS if kind == "et" else ""})
    rows.sort(key=lambda r: (r["round"], r["agent"]))
    return rows


def lead_time_violations(rows: Iterable[Mapping], M: int, exempt_rounds: Iterable[int] = ()) -> list[Mapping]:
    """Rows whose slot was not known at least M rounds ahead."""
    exempt = set(exempt_rounds)
    return [r for r in rows if r["round"] not in exempt and r["lead_time"] < M]
