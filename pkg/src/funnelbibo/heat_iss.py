"""Numerical check of the Lyapunov ISS estimate for x_t = x_zz - x^3 + b(z) u(t).

V(x) = ||x||^2 + 2 ||x_z||^2 + int x^4 and W(x) = ||x_z||^2 + int x^4. With
kappa = 2 - eps, rho = min(kappa, 2) / 3 and lam = (1/eps + 2/eta) ||b||, the
bound checked along trajectories is

    ||x(t)||_s^2 <= V(x0) e^{-rho t} / 2 + (lam / 2) int_0^t e^{-rho (t - s)} u(s)^2 ds

where ||.||_s is the gradient seminorm (default) or the full H1 norm.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .fd_models import HeatGrid, neumann_laplacian
from .integrate import IntegratorConfig, integrate

SEMINORMS = ("gradient", "h1")
QUADRATURE_TOL = 1e-6


@dataclass(frozen=True)
class LyapunovSample:
    t: float
    V: float
    W: float
    lhs: float
    rhs_envelope: float

    @property
    def lower_sandwich_ok(self) -> bool:
        return self.W <= self.V + 1e-10 * (1 + self.V)

    @property
    def upper_sandwich_ok(self) -> bool:
        return self.V <= 3 * self.W + 1e-10 * (1 + self.V)


def _trapz(grid: HeatGrid, values: np.ndarray) -> float:
    return float(np.trapezoid(values, dx=grid.h, axis=-1))


def lyapunov_terms(grid: HeatGrid, x: np.ndarray) -> tuple[float, float, float]:
    """(||x||^2, ||x_z||^2, int x^4) by trapezoid sums and forward differences."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != grid.n + 1:
        raise ValueError(f"expected {grid.n + 1} nodal values, got {x.shape[-1]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("grid state must be finite")
    l2 = _trapz(grid, x**2)
    grad = float(np.sum(np.diff(x) ** 2) / grid.h)
    quart = _trapz(grid, x**4)
    return l2, grad, quart


def lyapunov_eval(grid: HeatGrid, x: np.ndarray, seminorm: str = "gradient") -> tuple[float, float, float]:
    """Return (V, W, lhs) for a nodal state; lhs is the squared seminorm being bounded."""
    if seminorm not in SEMINORMS:
        raise ValueError(f"seminorm must be one of {SEMINORMS}")
    l2, grad, quart = lyapunov_terms(grid, x)
    V = l2 + 2 * grad + quart
    W = grad + quart
    lhs = grad if seminorm == "gradient" else l2 + grad
    return V, W, lhs


def iss_rates(epsilon: float, eta: float, b_norm: float) -> tuple[float, float]:
    """(rho, lam) for the chosen Young parameters; requires 0 < eps, eta < 2."""
    if not (0 < epsilon < 2 and 0 < eta < 2):
        raise ValueError("epsilon and eta must lie in (0, 2)")
    kappa = 2.0 - epsilon
    rho = min(kappa, 2.0) / 3.0
    lam = (1.0 / epsilon + 2.0 / eta) * b_norm
    return rho, lam


Signal = Union[float, Callable[[float], float]]


@dataclass
class ISSReport:
    t: np.ndarray
    lhs: np.ndarray
    envelope: np.ndarray
    V: np.ndarray
    W: np.ndarray
    rho: float
    lam: float
    seminorm: str
    first_violation: float
    v_decay_violation: float
    sandwich_upper_violation: float
    convention: str = "kappa = 2 - eps"

    @property
    def ok(self) -> bool:
        return math.isnan(self.first_violation)

    @property
    def v_decay_ok(self) -> bool:
        return math.isnan(self.v_decay_violation)

    @property
    def max_excess(self) -> float:
        return float(np.max(self.lhs - self.envelope))

    def samples(self) -> list[LyapunovSample]:
        return [LyapunovSample(*row) for row in zip(self.t, self.V, self.W, self.lhs, self.envelope)]


def _first(t, mask) -> float:
    idx = np.nonzero(mask)[0]
    return float(t[idx[0]]) if idx.size else math.nan


def verify_iss(b: Union[float, Callable[[np.ndarray], np.ndarray]], u: Signal,
               x0: Union[float, Callable[[np.ndarray], np.ndarray]], T: float, *,
               epsilon: float = 1.0, eta: float = 1.0, n: int = 100, seminorm: str = "gradient",
               tol: float = QUADRATURE_TOL,
               integrator: IntegratorConfig = IntegratorConfig(rtol=1e-8, atol=1e-10)) -> ISSReport:
    """Simulate the cubic heat equation and compare the seminorm with the ISS envelope.

    The input integral is carried as an extra state q' = -rho q + u^2, so the
    envelope is computed to integrator accuracy. Violations larger than
    ``tol`` are reported with the first offending time; the V-decay bound
    V(t) <= V(x0) e^{-rho t} + lam q(t) is reported separately.
    """
    grid = HeatGrid(n)
    z = grid.grid
    bz = np.full_like(z, float(b)) if not callable(b) else np.asarray(b(z), dtype=float)
    xz = np.full_like(z, float(x0)) if not callable(x0) else np.asarray(x0(z), dtype=float)
    usig = u if callable(u) else (lambda t, c=float(u): c)
    b_norm = math.sqrt(_trapz(grid, bz**2))
    rho, lam = iss_rates(epsilon, eta, b_norm)
    V0, _, _ = lyapunov_eval(grid, xz, seminorm)
    m = n + 1

    lap = np.column_stack([neumann_laplacian(e, grid.h) for e in np.eye(m)])

    def rhs(t, y):
        x = y[:m]
        ut = usig(t)
        out = np.empty_like(y)
        out[:m] = neumann_laplacian(x, grid.h) - x**3 + bz * ut
        out[m] = -rho * y[m] + ut * ut
        return out

    def jac(t, y):
        J = np.zeros((m + 1, m + 1))
        J[:m, :m] = lap - np.diag(3 * y[:m] ** 2)
        J[m, m] = -rho
        return J

    traj = integrate(rhs, np.append(xz, 0.0), (0.0, T), integrator, jac=jac)
    t = traj.t
    X = traj.y[:, :m]
    q = traj.y[:, m]
    terms = np.array([lyapunov_eval(grid, x, seminorm) for x in X])
    V, W, lhs = terms.T
    envelope = 0.5 * V0 * np.exp(-rho * t) + 0.5 * lam * q
    v_bound = V0 * np.exp(-rho * t) + lam * q
    return ISSReport(t, lhs, envelope, V, W, rho, lam, seminorm,
                     first_violation=_first(t, lhs > envelope + tol),
                     v_decay_violation=_first(t, V > v_bound + tol),
                     sandwich_upper_violation=_first(t, V > 3 * W + 1e-10 * (1 + V)))
