"""Linearly implicit Rosenbrock (2,3) integrator for stiff semi-discretisations.

The stage scheme is the modified Rosenbrock pair of Shampine and Reichelt:
a second-order L-stable step with an embedded third-order estimate of the
local error. Dense output between accepted steps is cubic Hermite.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import lu_factor, lu_solve

_D = 1.0 / (2.0 + math.sqrt(2.0))
_E32 = 6.0 + math.sqrt(2.0)
_EPS = np.finfo(float).eps


class IntegrationError(RuntimeError):
    pass


class MaxStepsExceeded(IntegrationError):
    pass


class StepUnderflow(IntegrationError):
    pass


@dataclass(frozen=True)
class IntegratorConfig:
    """Tolerances and step limits. ``h_min == h_max`` selects fixed steps."""

    rtol: float = 1e-6
    atol: float = 1e-9
    h_min: float = 1e-12
    h_max: float = np.inf
    max_steps: int = 100_000
    h0: Optional[float] = None

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("rtol and atol must be positive")
        if not 0 < self.h_min <= self.h_max:
            raise ValueError("need 0 < h_min <= h_max")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")

    @property
    def fixed(self) -> bool:
        return self.h_min == self.h_max


def group_columns(sparsity: np.ndarray) -> list[np.ndarray]:
    """Greedy partition of Jacobian columns into structurally orthogonal groups."""
    pattern = np.asarray(sparsity, dtype=bool)
    n = pattern.shape[1]
    groups: list[list[int]] = []
    used_rows: list[np.ndarray] = []
    for j in range(n):
        rows = pattern[:, j]
        for g, taken in zip(groups, used_rows):
            if not np.any(taken & rows):
                g.append(j)
                taken |= rows
                break
        else:
            groups.append([j])
            used_rows.append(rows.copy())
    return [np.array(g) for g in groups]


def fd_jacobian(rhs, t, y, f0, groups=None, sparsity=None):
    """Forward-difference Jacobian; columns in one group share an evaluation."""
    n = y.size
    if groups is None:
        groups = [np.array([j]) for j in range(n)]
    J = np.zeros((n, n))
    steps = math.sqrt(_EPS) * np.maximum(np.abs(y), 1.0)
    for cols in groups:
        yp = y.copy()
        yp[cols] += steps[cols]
        df = (rhs(t, yp) - f0)
        for j in cols:
            rows = slice(None) if sparsity is None else sparsity[:, j]
            J[rows, j] = df[rows] / steps[j]
    return J


@dataclass
class Trajectory:
    """Accepted steps with derivative samples for Hermite dense output."""

    t: np.ndarray
    y: np.ndarray
    f: np.ndarray
    nfev: int = 0
    njev: int = 0
    naccept: int = 0
    nreject: int = 0
    stats: dict = field(default_factory=dict)

    def __call__(self, tq) -> np.ndarray:
        tq = np.atleast_1d(np.asarray(tq, dtype=float))
        if np.any(tq < self.t[0] - 1e-12) or np.any(tq > self.t[-1] + 1e-12):
            raise ValueError("query time outside the integrated interval")
        i = np.clip(np.searchsorted(self.t, tq, side="right") - 1, 0, len(self.t) - 2)
        t0, t1 = self.t[i], self.t[i + 1]
        h = (t1 - t0)[:, None]
        s = ((tq - t0) / (t1 - t0))[:, None]
        y0, y1, f0, f1 = self.y[i], self.y[i + 1], self.f[i], self.f[i + 1]
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        return h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1


def _initial_step(rhs, t0, y0, f0, direction_span, cfg: IntegratorConfig) -> float:
    scale = cfg.atol + cfg.rtol * np.abs(y0)
    d0 = np.max(np.abs(y0) / scale)
    d1 = np.max(np.abs(f0) / scale)
    h = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    return float(min(max(h, cfg.h_min), cfg.h_max, direction_span))


def integrate(rhs: Callable[[float, np.ndarray], np.ndarray], y0, t_span,
              cfg: IntegratorConfig = IntegratorConfig(), *, jac=None, sparsity=None,
              on_step: Callable | None = None, autonomous: bool = False) -> Trajectory:
    """Integrate y' = rhs(t, y) over ``t_span`` with the Rosenbrock (2,3) pair.

    Parameters
    ----------
    jac : callable, optional
        Analytic Jacobian ``jac(t, y)``; otherwise forward differences, using
        column grouping when a boolean ``sparsity`` pattern is supplied.
    on_step : callable, optional
        Called as ``on_step(t_old, y_old, t_new, y_new, f_old, f_new)`` after
        every accepted step; it may raise to abort the integration.
    autonomous : bool
        Skip the time-derivative term of the stages.

    A non-finite right-hand side in any stage rejects the step.
    """
    t0, t1 = map(float, t_span)
    if t1 <= t0:
        raise ValueError("t_span must be increasing")
    y = np.array(y0, dtype=float)
    n = y.size
    groups = group_columns(sparsity) if sparsity is not None else None
    nfev = njev = nacc = nrej = 0

    def f(t, v):
        nonlocal nfev
        nfev += 1
        with np.errstate(all="ignore"):
            return np.asarray(rhs(t, v), dtype=float)

    t = t0
    fy = f(t, y)
    if not np.all(np.isfinite(fy)):
        raise IntegrationError("right-hand side is not finite at the initial point")
    ts, ys, fs = [t], [y.copy()], [fy.copy()]
    h = cfg.h_max if cfg.fixed else (cfg.h0 or _initial_step(f, t, y, fy, t1 - t0, cfg))
    eye = np.eye(n)
    steps = 0
    while t < t1 - 1e-14 * max(1.0, abs(t1)):
        if steps >= cfg.max_steps:
            raise MaxStepsExceeded(f"more than {cfg.max_steps} steps; reached t={t}")
        steps += 1
        if cfg.fixed:
            # grid t0 + k h without accumulated rounding, so step ends are reproducible
            h = min(t0 + steps * cfg.h_max, t1) - t
        else:
            h = min(h, t1 - t)
        J = jac(t, y) if jac is not None else fd_jacobian(f, t, y, fy, groups, sparsity)
        njev += 1
        if autonomous:
            T = np.zeros(n)
        else:
            dt = math.sqrt(_EPS) * max(abs(t), 1.0)
            T = (f(t + dt, y) - fy) / dt
        rejected = False
        while True:
            lu = lu_factor(eye - h * _D * J, check_finite=False)
            k1 = lu_solve(lu, fy + h * _D * T)
            f1 = f(t + 0.5 * h, y + 0.5 * h * k1)
            k2 = lu_solve(lu, f1 - k1) + k1
            ynew = y + h * k2
            f2 = f(t + h, ynew)
            k3 = lu_solve(lu, f2 - _E32 * (k2 - f1) - 2.0 * (k1 - fy) + h * _D * T)
            finite = np.all(np.isfinite(ynew)) and np.all(np.isfinite(f2)) and np.all(np.isfinite(k3))
            if cfg.fixed:
                if not finite:
                    raise IntegrationError(f"non-finite state at t={t + h}")
                err = 0.0
                break
            if finite:
                scale = cfg.atol + cfg.rtol * np.maximum(np.abs(y), np.abs(ynew))
                err = float(np.max(np.abs(h / 6.0 * (k1 - 2.0 * k2 + k3)) / scale))
            else:
                err = math.inf
            if err <= 1.0:
                break
            nrej += 1
            if h <= cfg.h_min:
                raise StepUnderflow(f"step size fell below h_min={cfg.h_min} at t={t}")
            if rejected or not finite:
                h = max(cfg.h_min, 0.5 * h)
            else:
                h = max(cfg.h_min, h * max(0.5, 0.8 * err ** (-1.0 / 3.0)))
            rejected = True
        t_old, y_old, f_old = t, y, fy
        t, y, fy = t + h, ynew, f2
        nacc += 1
        ts.append(t)
        ys.append(y.copy())
        fs.append(fy.copy())
        if on_step is not None:
            on_step(t_old, y_old, t, y, f_old, fy)
        if not cfg.fixed:
            grow = 5.0 if err == 0 else min(5.0, 0.8 * err ** (-1.0 / 3.0))
            if rejected:
                grow = min(grow, 1.0)
            h = min(cfg.h_max, max(cfg.h_min, h * grow))
    return Trajectory(np.array(ts), np.array(ys), np.array(fs), nfev, njev, nacc, nrej)
