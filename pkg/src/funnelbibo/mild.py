"""Mild solutions of x' = A x + B u + f(t, x) on a modal truncation.

Time is advanced in windows [t0, t0 + delta]. On each window the
variation-of-constants map is iterated to its fixed point (Picard), with the
window length chosen so that the map contracts with factor <= 1/2 in the
X_alpha sup-norm. Inside a window the nonlinearity is interpolated linearly
between sub-nodes and integrated exactly against e^{lambda (t - s)}; inputs
are piecewise constant (midpoint samples) and convolved exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy.special import gamma as gamma_fn, gammainc, gammaincinv

from .certificates import input_admissibility_bound, membership_exponent
from .spectral import (DualCoefficientSequence, ModalQuadrature, ModalVector,
                       RieszSpectralOperator, analytic_constant, interpolation_norms, mu_power)

Signal = Union[float, Callable[[float], float]]

PICARD_TOL = 1e-10
PICARD_MAXITER = 50
DIVERGENCE_THRESHOLD = 1e8


class StepSizeError(ValueError):
    """The window is too long for the fixed-point map to contract."""


class PicardDivergence(RuntimeError):
    pass


@dataclass(frozen=True)
class NonlinearityDescriptor:
    """f(t, x) acting on coefficient vectors.

    ``lipschitz`` is either a global constant L (X_alpha -> X) or a modulus
    r -> L(r) valid on the ball of radius r in X_alpha. ``growth`` is the
    optional envelope k(t) with ||f(t, x)|| <= k(t) (1 + ||x||_alpha) that
    rules out blow-up.
    """

    evaluate: Callable[[float, np.ndarray], np.ndarray]
    alpha: float = 0.0
    lipschitz: Union[float, Callable[[float], float]] = 0.0
    time_modulus: Optional[Callable[[float, float], float]] = None
    growth: Optional[Callable[[float], float]] = None
    f_zero_norm: float = 0.0

    def local_lipschitz(self, radius: float) -> float:
        if callable(self.lipschitz):
            return float(self.lipschitz(radius))
        return float(self.lipschitz)

    @property
    def globally_lipschitz(self) -> bool:
        return not callable(self.lipschitz)


def zero_nonlinearity(alpha: float = 0.0) -> NonlinearityDescriptor:
    return NonlinearityDescriptor(lambda t, c: np.zeros_like(c), alpha, 0.0,
                                  growth=lambda t: 0.0)


def pointwise_nonlinearity(op: RieszSpectralOperator, func: Callable[[np.ndarray], np.ndarray],
                           lipschitz_x: float, alpha: float = 0.5, order: int | None = None,
                           quadrature: ModalQuadrature | None = None) -> NonlinearityDescriptor:
    """Lift a scalar map g to x -> g(x(zeta)) projected on the eigenbasis.

    A pointwise g with Lipschitz constant L_X is Lipschitz X_alpha -> X with
    constant L_X omega^-alpha since ||x|| <= omega^-alpha ||x||_alpha.
    """
    q = quadrature or ModalQuadrature.build(op, order)
    L = lipschitz_x * op.omega ** (-alpha)
    f0 = float(np.linalg.norm(q.project(func(np.zeros_like(q.nodes)))))

    def evaluate(t, c):
        return q.project(func(q.synthesize(c)))

    return NonlinearityDescriptor(evaluate, alpha, L, growth=lambda t: max(L, f0), f_zero_norm=f0)


def _phi1(z):
    z = np.asarray(z, dtype=float)
    out = np.ones_like(z)
    nz = np.abs(z) > 1e-8
    out[nz] = np.expm1(z[nz]) / z[nz]
    return out


def _w_first(z):
    """int_0^1 e^{z s} s ds (weight of the window-start sample)."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = np.abs(z) < 1e-3
    zs = z[small]
    out[small] = 0.5 + zs / 3 + zs**2 / 8 + zs**3 / 30
    zb = z[~small]
    out[~small] = (zb * np.exp(zb) - np.expm1(zb)) / zb**2
    return out


@dataclass
class SimTrace:
    """Sampled time series; unused channels stay ``None``."""

    t: np.ndarray
    states: Optional[np.ndarray] = None
    u: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None
    y_ref: Optional[np.ndarray] = None
    e: Optional[np.ndarray] = None
    funnel_radius: Optional[np.ndarray] = None
    gain: Optional[np.ndarray] = None


@dataclass
class WindowResult:
    t: np.ndarray
    states: np.ndarray
    iterations: int


@dataclass
class SolveReport:
    trajectory: SimTrace
    t_max: float
    blew_up: bool
    picard_iterations: list = field(default_factory=list)
    step: float = math.nan

    @property
    def reached_horizon(self) -> bool:
        return not self.blew_up

    @property
    def iteration_stats(self) -> dict:
        it = np.asarray(self.picard_iterations)
        if it.size == 0:
            return {"windows": 0}
        return {"windows": int(it.size), "min": int(it.min()), "max": int(it.max()),
                "mean": float(it.mean())}


def _signal(u: Signal) -> Callable[[float], float]:
    if callable(u):
        return u
    value = float(u)
    return lambda t: value


def _check_input(b: Optional[DualCoefficientSequence], op: RieszSpectralOperator) -> None:
    if b is None:
        return
    if b.eta >= 1:
        raise ValueError(f"input operator regularity eta={b.eta} >= 1 is not admissible")
    if b.coefficients.size >= 16 and np.any(b.coefficients):
        eta_star = membership_exponent(b, op.eigenvalues, op.complete)
        if eta_star >= 1:
            raise ValueError(f"input coefficients decay too slowly (eta*={eta_star:.3g} >= 1)")


def convolve_input(op: RieszSpectralOperator, b: DualCoefficientSequence, u: Signal,
                   t: float, dt: float = 0.01) -> ModalVector:
    """int_0^t T(t - s) B u(s) ds with u piecewise constant on a grid of step dt.

    Mode n receives b_n sum_k u_k (e^{lambda_n (t - s_k)} - e^{lambda_n (t - s_{k+1})}) / (-lambda_n),
    with u_k the midpoint value on [s_k, s_{k+1}].
    """
    _check_input(b, op)
    if t < 0:
        raise ValueError("t must be non-negative")
    lam = op.eigenvalues[:b.coefficients.size]
    out = np.zeros(b.coefficients.size)
    if t == 0:
        return ModalVector(out)
    u = _signal(u)
    m = max(1, int(math.ceil(t / dt - 1e-9)))
    edges = np.linspace(0.0, t, m + 1)
    for s0, s1 in zip(edges[:-1], edges[1:]):
        h = s1 - s0
        out = np.exp(lam * h) * out + b.coefficients * u(0.5 * (s0 + s1)) * h * _phi1(lam * h)
    return ModalVector(out)


class MildSolver:
    """Window-wise Picard solver bound to an operator, input map and nonlinearity.

    Parameters
    ----------
    op : RieszSpectralOperator
    b : DualCoefficientSequence or None
        Input coefficients (``None`` for an autonomous system).
    f : NonlinearityDescriptor
    shift : float, optional
        delta in ||(-A)^alpha T(t)|| <= M t^-alpha e^{-delta t}; default omega/2.
    dt : float
        Sub-node spacing inside windows (and the output resolution).
    max_window : float
        Upper cap on the window length.
    """

    def __init__(self, op: RieszSpectralOperator, b: Optional[DualCoefficientSequence],
                 f: NonlinearityDescriptor, *, order: int | None = None, shift: float | None = None,
                 dt: float = 0.01, max_window: float = 0.5, tol: float = PICARD_TOL,
                 max_iter: int = PICARD_MAXITER, divergence: float = DIVERGENCE_THRESHOLD):
        order = op.order if order is None else order
        self.op = op.truncate(order) if order < op.order else op
        _check_input(b, self.op)
        self.b = None if b is None else DualCoefficientSequence(b.coefficients[:order], b.eta)
        self.f = f
        self.alpha = float(f.alpha)
        self.lam = self.op.eigenvalues
        self.order = order
        if not self.op.is_exponentially_stable:
            raise ValueError("the mild solver needs an exponentially stable semigroup")
        self.shift = 0.5 * self.op.omega if shift is None else float(shift)
        self.M_alpha = analytic_constant(self.op, self.alpha, self.shift)
        self.C1 = 0.0 if self.b is None else input_admissibility_bound(self.op, self.b, self.alpha)
        self.M = 1.0
        self.dt = float(dt)
        self.max_window = float(max_window)
        self.tol = tol
        self.max_iter = max_iter
        self.divergence = divergence
        self._weights = {}

    # -- constants ---------------------------------------------------------

    def c2(self, window: float) -> float:
        """Finite-time admissibility constant C_{2,window} of (-A)^alpha (incomplete Gamma)."""
        a = 1.0 - self.alpha
        return self.M_alpha * gamma_fn(a) * gammainc(a, self.shift * window) / self.shift ** a

    def max_window_for(self, L: float) -> float:
        """Largest window with C_{2,window} L <= 1/2 (capped by ``max_window``)."""
        if L <= 0:
            return self.max_window
        a = 1.0 - self.alpha
        target = 0.5 * self.shift ** a / (L * self.M_alpha * gamma_fn(a))
        if target >= 1.0:
            return self.max_window
        return min(self.max_window, float(gammaincinv(a, target)) / self.shift)

    def ball_radius(self, x0: np.ndarray, u_sup: float) -> float:
        """m = 2 M r + C_{1,inf} ||u|| with r = ||x0||_alpha."""
        r = float(interpolation_norms(self.op, x0, self.alpha)[0])
        return 2.0 * self.M * max(r, 1e-300) + self.C1 * u_sup

    # -- one window --------------------------------------------------------

    def _window_weights(self, h: float):
        key = round(h, 15)
        if key not in self._weights:
            z = self.lam * h
            e = np.exp(z)
            # F linear on the sub-interval; start sample weight is int_0^h e^{lam s} s/h ds
            w_start = h * _w_first(z)
            w_total = h * _phi1(z)
            self._weights[key] = (e, w_start, w_total - w_start, w_total)
        return self._weights[key]

    def picard_step(self, x0: np.ndarray, u: Signal, t0: float, delta: float,
                    u_sup: float | None = None) -> WindowResult:
        """Fixed point of the mild-solution map on [t0, t0 + delta]."""
        x0 = np.asarray(x0, dtype=float)
        u = _signal(u)
        m_sub = max(1, int(math.ceil(delta / self.dt - 1e-9)))
        if m_sub < 4 and delta < self.dt:
            m_sub = 4
        h = delta / m_sub
        times = t0 + h * np.arange(m_sub + 1)
        if u_sup is None:
            u_sup = max(abs(u(t)) for t in times[:-1] + 0.5 * h) if self.b is not None else 0.0
        L = self.f.local_lipschitz(self.ball_radius(x0, u_sup))
        factor = self.c2(delta) * L
        if factor >= 1:
            raise StepSizeError(f"contraction factor {factor:.3g} >= 1 for window {delta}")
        if factor > 0.5 + 1e-12:
            raise StepSizeError(f"C2(window) * L = {factor:.3g} exceeds 1/2")

        e, w_start, w_end, w_total = self._window_weights(h)
        free = np.empty((m_sub + 1, self.order))
        free[0] = x0
        for j in range(m_sub):
            drive = 0.0 if self.b is None else self.b.coefficients * u(times[j] + 0.5 * h) * w_total
            free[j + 1] = e * free[j] + drive

        def apply(states):
            F = np.array([self.f.evaluate(tj, xj) for tj, xj in zip(times, states)])
            out = np.empty_like(states)
            out[0] = x0
            conv = np.zeros(self.order)
            for j in range(m_sub):
                conv = e * conv + w_start * F[j] + w_end * F[j + 1]
                out[j + 1] = free[j + 1] + conv
            return out

        states = free.copy()
        weight = mu_power(-self.lam, self.alpha)
        for it in range(1, self.max_iter + 1):
            new = apply(states)
            if not np.all(np.isfinite(new)):
                raise PicardDivergence(f"non-finite iterate on window starting at t={t0}")
            diff = np.max(np.abs((new - states) * weight))
            scale = max(1.0, float(np.max(np.abs(new * weight))))
            states = new
            if diff <= self.tol * scale:
                return WindowResult(times, states, it)
        raise PicardDivergence(f"Picard iteration did not converge in {self.max_iter} iterations "
                               f"on window starting at t={t0}")

    # -- whole horizon -----------------------------------------------------

    def solve(self, x0, u: Signal, horizon: float, *, output=None) -> SolveReport:
        """Concatenate windows up to ``horizon`` or until blow-up.

        For globally Lipschitz f the window length is fixed once (an integer
        multiple of ``dt``); for local moduli it is recomputed from the ball
        containing the current state. ``output`` is an optional coefficient
        vector c with y = sum c_n x_n.
        """
        x = np.asarray(x0.coefficients if isinstance(x0, ModalVector) else x0, dtype=float)
        if x.size != self.order:
            raise ValueError(f"initial state has order {x.size}, solver uses {self.order}")
        usig = _signal(u)
        probe = np.linspace(0.0, horizon, 2001)
        u_sup = float(np.max(np.abs([usig(t) for t in probe]))) if self.b is not None else 0.0

        def window_length(state):
            L = self.f.local_lipschitz(self.ball_radius(state, u_sup))
            w = self.max_window_for(L)
            if w >= self.dt:
                w = self.dt * math.floor(w / self.dt + 1e-9)
            return w

        fixed = window_length(x) if self.f.globally_lipschitz else None
        t = 0.0
        ts, xs, iters = [0.0], [x.copy()], []
        used = []
        blew_up = False
        while t < horizon - 1e-12:
            w = fixed if fixed is not None else window_length(x)
            if w <= 1e-14 * max(1.0, t):
                blew_up = True
                break
            w = min(w, horizon - t)
            res = self.picard_step(x, usig, t, w, u_sup)
            iters.append(res.iterations)
            used.append(w)
            norms = interpolation_norms(self.op, res.states[1:], self.alpha)
            over = np.nonzero(norms > self.divergence)[0]
            if over.size:
                k = over[0] + 1
                ts.extend(res.t[1:k + 1])
                xs.extend(res.states[1:k + 1])
                t = float(res.t[k])
                blew_up = True
                break
            ts.extend(res.t[1:])
            xs.extend(res.states[1:])
            t = float(res.t[-1])
            x = res.states[-1]
        if blew_up and self.f.growth is not None:
            raise PicardDivergence("divergence detected although a linear-growth envelope was supplied")
        states = np.array(xs)
        times = np.array(ts)
        trace = SimTrace(times, states)
        if self.b is not None:
            trace.u = np.array([usig(tt) for tt in times])
        if output is not None:
            trace.y = states @ np.asarray(output, dtype=float)[:self.order]
        return SolveReport(trace, t if blew_up else math.inf, blew_up, iters,
                           float(np.median(used)) if used else math.nan)


def picard_step(op: RieszSpectralOperator, b: Optional[DualCoefficientSequence],
                f: NonlinearityDescriptor, x0, u: Signal, t0: float, delta: float,
                **kwargs) -> WindowResult:
    x0 = x0.coefficients if isinstance(x0, ModalVector) else np.asarray(x0, float)
    return MildSolver(op, b, f, order=x0.size, **kwargs).picard_step(x0, u, t0, delta)


def solve(op: RieszSpectralOperator, b: Optional[DualCoefficientSequence], f: NonlinearityDescriptor,
          x0, u: Signal, horizon: float, *, output=None, **kwargs) -> SolveReport:
    x0 = x0.coefficients if isinstance(x0, ModalVector) else np.asarray(x0, float)
    return MildSolver(op, b, f, order=x0.size, **kwargs).solve(x0, u, horizon, output=output)
