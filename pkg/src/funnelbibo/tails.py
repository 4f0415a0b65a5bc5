"""Tail bounds for non-negative series known only up to a truncation order."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TailEstimate:
    partial: float
    bound: float
    exponent: float
    finite: bool

    @property
    def total(self) -> float:
        return self.partial + self.bound


def power_tail(terms, min_terms: int = 8) -> TailEstimate:
    """Bound sum_{n >= N} a_n from a_0..a_{N-1} by integral comparison.

    A power law a_n ~ K n^-s is fitted on the upper half of the indices; K is
    raised until K n^-s dominates every term of that window, then
    ``K (N-1)^(1-s) / (s-1)`` bounds the remainder. The bound is rigorous
    whenever the local decay exponent does not drop below the fitted one past
    the window (true for power laws with decreasing correction and for
    geometric decay). s <= 1 flags divergence.
    """
    a = np.abs(np.asarray(terms, dtype=float))
    N = a.size
    partial = float(a.sum())
    if N < min_terms:
        raise ValueError(f"need at least {min_terms} terms for a tail estimate")
    n = np.arange(N)
    window = (n >= max(1, N // 2))
    pos = window & (a > 0)
    if not np.any(pos):
        return TailEstimate(partial, 0.0, np.inf, True)
    if pos.sum() < 2:
        return TailEstimate(partial, np.inf, 0.0, False)
    ln, la = np.log(n[pos]), np.log(a[pos])
    slope = np.polyfit(ln, la, 1)[0]
    s = float(-slope)
    if s <= 1.0 + 1e-9:
        return TailEstimate(partial, np.inf, s, False)
    logK = float(np.max(la + s * ln))
    bound = float(np.exp(logK + (1.0 - s) * np.log(N - 1)) / (s - 1.0))
    return TailEstimate(partial, bound, s, True)
