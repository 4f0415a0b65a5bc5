"""Funnel control of the tubular reactor coupled to a stirred tank.

The plant is the boundary-controlled reactor tube with inflow gradient
x'(0, t) = x_F(t), and the tank x_F' = a1 x_F + a2 u + R x(1, t). The
output is y = x_F, and the controller is u = -e / (1 - phi^2 e^2).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .fd_models import (GridState, ReactorParams, reactor_matrix, reactor_pde_rhs,
                        reactor_sparsity, saturating, saturating_derivative)
from .integrate import IntegrationError, IntegratorConfig, integrate
from .mild import SimTrace
from .spectral import (ModalQuadrature, point_observation_coefficients, reactor_input_coefficients,
                       reactor_operator)

VIOLATION_LEVEL = 1.0 - 1e-12


class FunnelViolation(RuntimeError):
    """The tracking error reached the funnel boundary."""

    def __init__(self, message: str, t: float = math.nan, trace: SimTrace | None = None):
        super().__init__(message)
        self.t = t
        self.trace = trace


class HypothesisError(ValueError):
    """A precondition of the closed-loop guarantee fails (e.g. phi(0)|e(0)| >= 1)."""


@dataclass(frozen=True)
class FunnelSpec:
    """A funnel boundary phi with derivative and a witness for liminf phi > 0."""

    phi: Callable[[float], float]
    phi_dot: Callable[[float], float]
    liminf: float
    name: str = "custom"

    def __post_init__(self):
        if not self.liminf > 0:
            raise ValueError("liminf witness must be positive")

    def validate(self, horizon: float, samples: int = 4001) -> None:
        """Sample phi and phi_dot on [0, horizon]; both must be finite and phi > 0."""
        t = np.linspace(0.0, horizon, samples)
        p = np.array([self.phi(s) for s in t])
        pd = np.array([self.phi_dot(s) for s in t])
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(pd))):
            raise ValueError("funnel function or its derivative is not finite")
        if np.any(p <= 0):
            raise ValueError("funnel function must be positive")

    def radius(self, t: float) -> float:
        return 1.0 / self.phi(t)


def exponential_funnel() -> FunnelSpec:
    """phi(t) = 1 / (2 e^{-2t} + 0.2): radius shrinks from 2.2 to 0.2."""
    return FunnelSpec(lambda t: 1.0 / (2.0 * math.exp(-2.0 * t) + 0.2),
                      lambda t: 4.0 * math.exp(-2.0 * t) / (2.0 * math.exp(-2.0 * t) + 0.2) ** 2,
                      5.0, "exponential")


def constant_funnel(phi: float) -> FunnelSpec:
    return FunnelSpec(lambda t: phi, lambda t: 0.0, phi, "constant")


def funnel_law(e: float, phi: float) -> float:
    """u = -e / (1 - phi^2 e^2); raises at the funnel boundary."""
    pe = abs(phi * e)
    if not pe < VIOLATION_LEVEL:
        raise FunnelViolation(f"phi|e| = {pe:.17g} reached the funnel boundary")
    return -e / (1.0 - (phi * e) ** 2)


def gain(e: float, phi: float) -> float:
    pe = abs(phi * e)
    if not pe < VIOLATION_LEVEL:
        raise FunnelViolation(f"phi|e| = {pe:.17g} reached the funnel boundary")
    return 1.0 / (1.0 - pe * pe)


def _law_derivative(e: float, phi: float) -> float:
    q = (phi * e) ** 2
    return -(1.0 + q) / (1.0 - q) ** 2


@dataclass(frozen=True)
class ClosedLoopConfig:
    reactor: ReactorParams = ReactorParams()
    funnel: FunnelSpec = field(default_factory=exponential_funnel)
    y_ref: Callable[[float], float] = lambda t: 0.5 * math.cos(t)
    horizon: float = 10.0
    backend: str = "finite-difference"
    x0: float | Callable[[np.ndarray], np.ndarray] = 1.0
    x_F0: float = 1.0
    modes: int = 100
    integrator: IntegratorConfig = IntegratorConfig(rtol=1e-6, atol=1e-9)
    output_dt: float = 0.01

    def __post_init__(self):
        if self.backend not in ("finite-difference", "spectral"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    def initial_profile(self, zeta: np.ndarray) -> np.ndarray:
        if callable(self.x0):
            return np.asarray(self.x0(zeta), dtype=float)
        return np.full_like(zeta, float(self.x0))

    def initial_funnel_value(self) -> float:
        return abs(self.funnel.phi(0.0) * (self.x_F0 - self.y_ref(0.0)))


@dataclass
class FunnelReport:
    completed: bool
    initial_phi_e: float
    max_phi_e: float
    eps_margin: float
    distance_margin: float
    sup_u: float
    sup_gain: float
    sup_y: float
    controller_sign_ok: bool
    naccept: int
    nreject: int

    @property
    def ok(self) -> bool:
        return (self.completed and self.eps_margin > 0 and self.controller_sign_ok
                and all(math.isfinite(v) for v in (self.sup_u, self.sup_gain, self.sup_y)))

    def lines(self) -> list[str]:
        return [f"{k} = {v!r}" for k, v in sorted(self.__dict__.items())] + [f"ok = {self.ok!r}"]


@dataclass
class ClosedLoopResult:
    trace: SimTrace
    report: FunnelReport
    x1: np.ndarray
    profile_times: np.ndarray
    profiles: np.ndarray
    zeta: np.ndarray


class _Monitor:
    """Checks phi|e| at step ends and Hermite midpoints of the tank state."""

    def __init__(self, funnel: FunnelSpec, y_ref, idx: int):
        self.funnel, self.y_ref, self.idx = funnel, y_ref, idx
        self.max_pe = 0.0
        self.min_dist = math.inf

    def check(self, t, y):
        e = float(y) - self.y_ref(t)
        phi = self.funnel.phi(t)
        pe = float(abs(phi * e))
        self.max_pe = max(self.max_pe, pe)
        self.min_dist = min(self.min_dist, float(1.0 / phi - abs(e)))
        if not pe < VIOLATION_LEVEL:
            raise FunnelViolation(f"funnel violated at t={t:.17g} (phi|e| = {pe:.17g})", t)

    def __call__(self, t0, y0, t1, y1, f0, f1):
        i = self.idx
        h = t1 - t0
        mid = 0.5 * (y0[i] + y1[i]) + h * (f0[i] - f1[i]) / 8.0
        self.check(0.5 * (t0 + t1), mid)
        self.check(t1, y1[i])


def _fd_system(cfg: ClosedLoopConfig):
    p = cfg.reactor
    m = p.n + 1
    A = reactor_matrix(p)
    eta_col = reactor_pde_rhs(p.with_(nonlinear=False), np.zeros(m), 1.0)
    phi, y_ref = cfg.funnel.phi, cfg.y_ref

    def rhs(t, y):
        x, xf = y[:m], y[m]
        e = xf - y_ref(t)
        ph = phi(t)
        if not abs(ph * e) < VIOLATION_LEVEL:
            return np.full(y.size, np.nan)
        u = -e / (1.0 - (ph * e) ** 2)
        out = np.empty_like(y)
        out[:m] = reactor_pde_rhs(p, x, xf)
        out[m] = p.a1 * xf + p.a2 * u + p.R * x[-1]
        return out

    def jac(t, y):
        x, xf = y[:m], y[m]
        J = np.zeros((m + 1, m + 1))
        J[:m, :m] = A
        if p.nonlinear:
            J[np.arange(m), np.arange(m)] += saturating_derivative(x)
        J[:m, m] = eta_col
        e = xf - y_ref(t)
        ph = phi(t)
        J[m, m] = p.a1 + p.a2 * (_law_derivative(e, ph) if abs(ph * e) < 1 else 0.0)
        J[m, m - 1] = p.R
        return J

    y0 = np.append(cfg.initial_profile(p.grid), cfg.x_F0)
    return rhs, jac, y0, (lambda y: y[..., m - 1]), p.grid, (lambda y: y[..., :m])


def _spectral_system(cfg: ClosedLoopConfig):
    p = cfg.reactor
    op = reactor_operator(p.D, p.v, p.psi, cfg.modes)
    q = ModalQuadrature.build(op)
    lam = op.eigenvalues
    b = reactor_input_coefficients(op).coefficients
    c = point_observation_coefficients(op, 1.0).coefficients
    N = op.order
    phi, y_ref = cfg.funnel.phi, cfg.y_ref
    zeta = p.grid
    plot_basis = op.basis(zeta, N)

    def rhs(t, y):
        a, xf = y[:N], y[N]
        e = xf - y_ref(t)
        ph = phi(t)
        if not abs(ph * e) < VIOLATION_LEVEL:
            return np.full(y.size, np.nan)
        u = -e / (1.0 - (ph * e) ** 2)
        out = np.empty_like(y)
        out[:N] = lam * a + b * xf
        if p.nonlinear:
            out[:N] += q.project(saturating(q.synthesize(a)))
        out[N] = p.a1 * xf + p.a2 * u + p.R * (c @ a)
        return out

    def jac(t, y):
        a, xf = y[:N], y[N]
        J = np.zeros((N + 1, N + 1))
        J[:N, :N] = np.diag(lam)
        if p.nonlinear:
            g = saturating_derivative(q.synthesize(a))
            J[:N, :N] += q.basis.T @ ((q.weights * g)[:, None] * q.basis)
        J[:N, N] = b
        e = xf - y_ref(t)
        ph = phi(t)
        J[N, N] = p.a1 + p.a2 * (_law_derivative(e, ph) if abs(ph * e) < 1 else 0.0)
        J[N, :N] = p.R * c
        return J

    a0 = q.project(cfg.initial_profile(q.nodes))
    y0 = np.append(a0, cfg.x_F0)
    return rhs, jac, y0, (lambda y: y[..., :N] @ c), zeta, (lambda y: y[..., :N] @ plot_basis.T)


def closed_loop_simulate(cfg: ClosedLoopConfig = ClosedLoopConfig(), *,
                         profile_times=(0.0, 1.0, 2.5, 5.0, 10.0)) -> ClosedLoopResult:
    """Integrate tube, tank and controller over [0, horizon] and verify the funnel guarantees.

    Raises :class:`HypothesisError` before integrating when phi(0)|e(0)| >= 1
    and :class:`FunnelViolation` (carrying the violation time) if the error
    reaches the boundary during the run.
    """
    pe0 = cfg.initial_funnel_value()
    if not pe0 < 1.0:
        raise HypothesisError(f"initial error outside the funnel: phi(0)|e(0)| = {pe0:.6g} >= 1")
    cfg.funnel.validate(cfg.horizon)
    build = _fd_system if cfg.backend == "finite-difference" else _spectral_system
    rhs, jac, y0, x_at_1, zeta, profile = build(cfg)
    idx = y0.size - 1
    mon = _Monitor(cfg.funnel, cfg.y_ref, idx)
    mon.check(0.0, y0[idx])
    try:
        traj = integrate(rhs, y0, (0.0, cfg.horizon), cfg.integrator, jac=jac, on_step=mon)
    except FunnelViolation:
        raise
    except IntegrationError as exc:
        raise FunnelViolation(f"integration stopped before the horizon: {exc}") from exc

    m = int(round(cfg.horizon / cfg.output_dt))
    t_out = np.linspace(0.0, cfg.horizon, m + 1)
    Y = traj(t_out)
    y = Y[:, idx]
    ref = np.array([cfg.y_ref(t) for t in t_out])
    phi = np.array([cfg.funnel.phi(t) for t in t_out])
    e = y - ref
    for t, v in zip(t_out, y):
        mon.check(t, v)
    k = 1.0 / (1.0 - (phi * e) ** 2)
    u = -k * e
    trace = SimTrace(t_out, None, u, y, ref, e, 1.0 / phi, k)

    # controller sign and gains on the accepted steps too
    ts = traj.t
    es = traj.y[:, idx] - np.array([cfg.y_ref(t) for t in ts])
    ps = np.array([cfg.funnel.phi(t) for t in ts])
    ks = 1.0 / (1.0 - (ps * es) ** 2)
    us = -ks * es
    report = FunnelReport(
        completed=bool(abs(traj.t[-1] - cfg.horizon) <= 1e-9 * max(1.0, cfg.horizon)),
        initial_phi_e=pe0,
        max_phi_e=mon.max_pe,
        eps_margin=1.0 - mon.max_pe,
        distance_margin=mon.min_dist,
        sup_u=float(max(np.max(np.abs(u)), np.max(np.abs(us)))),
        sup_gain=float(max(np.max(k), np.max(ks))),
        sup_y=float(max(np.max(np.abs(y)), np.max(np.abs(traj.y[:, idx])))),
        controller_sign_ok=bool(np.all(u * e <= 0) and np.all(us * es <= 0)),
        naccept=traj.naccept, nreject=traj.nreject)
    pt = np.array([t for t in profile_times if 0 <= t <= cfg.horizon])
    return ClosedLoopResult(trace, report, x_at_1(Y), pt, profile(traj(pt)) if pt.size else
                            np.empty((0, zeta.size)), zeta)


# ---------------------------------------------------------------------------
# the internal-dynamics operator S


@dataclass
class SOutput:
    t: np.ndarray
    eta: np.ndarray
    x1: np.ndarray
    S: np.ndarray


def operator_S(eta: Callable[[float], float], horizon: float, params: ReactorParams = ReactorParams(),
               x0: float | np.ndarray = 1.0, step: float = 0.01) -> SOutput:
    """S(eta)(t) = a1 eta(t) + R x(1, t), x driven through x'(0, t) = eta(t).

    Fixed Rosenbrock steps make the output at t_k a function of eta on
    [0, t_k] only, so two inputs with a common prefix give bit-identical
    outputs on that prefix.
    """
    p = params
    m = p.n + 1
    x_init = np.full(m, float(x0)) if np.ndim(x0) == 0 else np.asarray(x0, dtype=float)
    A = reactor_matrix(p)

    def rhs(t, x):
        return reactor_pde_rhs(p, x, eta(t))

    def jac(t, x):
        if not p.nonlinear:
            return A
        return A + np.diag(saturating_derivative(x))

    n_steps = max(1, int(round(horizon / step)))
    h = horizon / n_steps
    traj = integrate(rhs, x_init, (0.0, horizon),
                     IntegratorConfig(h_min=h, h_max=h, max_steps=n_steps + 10), jac=jac)
    t = traj.t
    ev = np.array([eta(s) for s in t])
    x1 = traj.y[:, -1]
    return SOutput(t, ev, x1, p.a1 * ev + p.R * x1)


@dataclass
class LipschitzProbe:
    ratio: float
    pde_ratio: float
    refined_ratio: float
    refined_pde_ratio: float
    pairs: int
    skipped: int

    @property
    def refinement_change(self) -> float:
        if self.ratio == 0:
            return 0.0 if self.refined_ratio == 0 else math.inf
        return abs(self.refined_ratio - self.ratio) / self.ratio

    @property
    def finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.ratio, self.pde_ratio, self.refined_ratio))


def check_S_local_lipschitz(eta: Callable[[float], float], perturbations, t: float, tau: float,
                            params: ReactorParams = ReactorParams(), step: float = 0.01) -> LipschitzProbe:
    """Largest sampled ||S(eta1) - S(eta2)|| / ||eta1 - eta2|| on [t, t + tau].

    Each perturbation is a function vanishing on [0, t]; eta2 = eta + perturbation.
    The same probe is repeated with half the step to expose grid dependence.
    """
    def probe(h):
        base = operator_S(eta, t + tau, params, step=h)
        window = base.t >= t - 1e-12
        best = best_pde = 0.0
        used = skipped = 0
        for pert in perturbations:
            other = operator_S(lambda s, pert=pert: eta(s) + pert(s), t + tau, params, step=h)
            d_eta = np.max(np.abs(base.eta[window] - other.eta[window]))
            if d_eta == 0:
                skipped += 1
                continue
            used += 1
            best = max(best, np.max(np.abs(base.S[window] - other.S[window])) / d_eta)
            best_pde = max(best_pde, params.R * np.max(np.abs(base.x1[window] - other.x1[window])) / d_eta)
        return float(best), float(best_pde), used, skipped

    r, rp, used, skipped = probe(step)
    r2, rp2, _, _ = probe(step / 2)
    return LipschitzProbe(r, rp, r2, rp2, used, skipped)


__all__ = ["FunnelSpec", "FunnelViolation", "HypothesisError", "ClosedLoopConfig", "ClosedLoopResult",
           "FunnelReport", "exponential_funnel", "constant_funnel", "funnel_law", "gain",
           "closed_loop_simulate", "operator_S", "SOutput", "check_S_local_lipschitz", "LipschitzProbe",
           "GridState", "reactor_sparsity"]
