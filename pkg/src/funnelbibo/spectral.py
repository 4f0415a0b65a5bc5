"""Diagonal (Riesz-spectral) generators on weighted L2(0, 1).

A state is stored by its coefficients in the orthonormal eigenbasis, so the
semigroup, fractional powers and interpolation norms all act mode-wise.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from numpy.polynomial.legendre import leggauss

from .tails import power_tail

EigenfunctionEvaluator = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RieszSpectralOperator:
    """Self-adjoint diagonal generator with real eigenvalues.

    Parameters
    ----------
    eigenvalues : array_like
        lambda_0 > lambda_1 > ... (1/time).
    eigenfunction : callable
        ``eigenfunction(n, zeta)`` evaluates phi_n at the points ``zeta`` for
        the integer array ``n``; returns shape ``(len(zeta), len(n))``.
    weight : callable
        Spatial weight rho(zeta) > 0 of the inner product.
    params : mapping, optional
        Physical parameters the operator was built from (for reports).
    complete : bool
        True when ``eigenvalues`` is the whole spectrum (finite-dimensional
        state space), so series over the modes are exact finite sums.
    """

    eigenvalues: np.ndarray
    eigenfunction: EigenfunctionEvaluator
    weight: Callable[[np.ndarray], np.ndarray]
    params: Mapping[str, float] = field(default_factory=dict)
    name: str = "custom"
    complete: bool = False

    def __post_init__(self):
        lam = _readonly(self.eigenvalues)
        if lam.ndim != 1 or lam.size == 0:
            raise ValueError("eigenvalues must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(lam)):
            raise ValueError("eigenvalues must be finite")
        if np.any(np.diff(lam) >= 0):
            raise ValueError("eigenvalues must be strictly decreasing")
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "params", dict(self.params))

    @property
    def order(self) -> int:
        return self.eigenvalues.size

    @property
    def omega(self) -> float:
        """Stability margin inf_n(-lambda_n); positive iff exponentially stable."""
        return float(-self.eigenvalues[0])

    @property
    def is_exponentially_stable(self) -> bool:
        return self.omega > 0

    def basis(self, zeta, order: int | None = None) -> np.ndarray:
        """Matrix ``Phi[i, n] = phi_n(zeta_i)`` for the first ``order`` modes."""
        zeta = np.atleast_1d(np.asarray(zeta, dtype=float))
        if np.any((zeta < 0) | (zeta > 1)):
            raise ValueError("zeta must lie in [0, 1]")
        n = np.arange(self.order if order is None else order)
        return self.eigenfunction(n, zeta)

    def truncate(self, order: int) -> "RieszSpectralOperator":
        if not 0 < order <= self.order:
            raise ValueError(f"order must be in [1, {self.order}]")
        return RieszSpectralOperator(self.eigenvalues[:order], self.eigenfunction,
                                     self.weight, self.params, self.name)


@dataclass(frozen=True, eq=False)
class ModalVector:
    """Truncated coefficient vector c_0..c_{N-1} of a state."""

    coefficients: np.ndarray

    def __post_init__(self):
        c = _readonly(self.coefficients)
        if c.ndim != 1:
            raise ValueError("coefficients must be 1-D")
        object.__setattr__(self, "coefficients", c)

    @property
    def order(self) -> int:
        return self.coefficients.size

    @classmethod
    def unit(cls, n: int, order: int) -> "ModalVector":
        c = np.zeros(order)
        c[n] = 1.0
        return cls(c)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coefficients))


@dataclass(frozen=True, eq=False)
class DualCoefficientSequence:
    """Pairings b_n = <z, phi_n> of a functional with the eigenbasis.

    ``eta`` is the declared regularity: z is claimed to lie in X_{-eta}.
    """

    coefficients: np.ndarray
    eta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "coefficients", _readonly(self.coefficients))


def _check_alpha(alpha: float, upper_open: bool = False) -> float:
    alpha = float(alpha)
    if alpha < 0 or alpha > 1 or (upper_open and alpha == 1):
        raise ValueError(f"alpha={alpha} outside the admissible range")
    return alpha


def _mu(op: RieszSpectralOperator, order: int) -> np.ndarray:
    if order > op.order:
        raise ValueError(f"vector order {order} exceeds operator order {op.order}")
    return -op.eigenvalues[:order]


def mu_power(mu: np.ndarray, alpha: float) -> np.ndarray:
    """mu**alpha evaluated in log space; 0**0 is 1."""
    mu = np.asarray(mu, dtype=float)
    if alpha == 0:
        return np.ones_like(mu)
    out = np.zeros_like(mu)
    pos = mu > 0
    out[pos] = np.exp(alpha * np.log(mu[pos]))
    return out


def semigroup_apply(op: RieszSpectralOperator, x: ModalVector, t: float) -> ModalVector:
    if t < 0:
        raise ValueError("semigroup time must be non-negative")
    lam = op.eigenvalues[:x.order]
    return ModalVector(np.exp(lam * t) * x.coefficients)


def fractional_power_apply(op: RieszSpectralOperator, x: ModalVector, alpha: float) -> ModalVector:
    alpha = _check_alpha(alpha)
    out = mu_power(_mu(op, x.order), alpha) * x.coefficients
    if not np.all(np.isfinite(out)):
        raise ValueError("state is not in the requested interpolation space")
    return ModalVector(out)


def interpolation_norm(op: RieszSpectralOperator, x: ModalVector, alpha: float) -> float:
    return fractional_power_apply(op, x, alpha).norm()


def interpolation_norms(op: RieszSpectralOperator, coeffs: np.ndarray, alpha: float) -> np.ndarray:
    """Row-wise ||.||_alpha for a stack of coefficient vectors."""
    coeffs = np.atleast_2d(coeffs)
    w = mu_power(_mu(op, coeffs.shape[-1]), _check_alpha(alpha))
    return np.linalg.norm(coeffs * w, axis=-1)


def synthesize(op: RieszSpectralOperator, x: ModalVector, zeta: float,
               return_tail: bool = False):
    """Point value sum_n c_n phi_n(zeta) of the truncated expansion.

    With ``return_tail`` the result is ``(value, tail)`` where ``tail``
    estimates the omitted part from the decay of |c_n phi_n(zeta)|.
    """
    zeta = float(zeta)
    if not 0.0 <= zeta <= 1.0:
        raise ValueError("zeta must lie in [0, 1]")
    terms = op.basis([zeta], x.order)[0] * x.coefficients
    value = float(terms.sum())
    if not return_tail:
        return value
    return value, power_tail(np.abs(terms)).bound


def analytic_constant(op: RieszSpectralOperator, alpha: float, delta: float) -> float:
    """Smallest M with ||(-A)^alpha T(t)|| <= M t^-alpha e^{-delta t} for all t > 0.

    Per mode the maximiser of mu^alpha t^alpha e^{-(mu - delta) t} is
    t* = alpha / (mu - delta), giving (alpha mu / (e (mu - delta)))^alpha.
    """
    alpha = _check_alpha(alpha)
    mu = -op.eigenvalues
    if alpha == 0:
        if delta > op.omega:
            raise ValueError("delta exceeds the stability margin")
        return 1.0
    if delta >= op.omega:
        raise ValueError("delta must be below the stability margin")
    per_mode = alpha * mu / (np.e * (mu - delta))
    return float(np.max(np.exp(alpha * np.log(per_mode))))


def _composite_gauss(panels: int, nodes: int = 8):
    x, w = leggauss(nodes)
    edges = np.linspace(0.0, 1.0, panels + 1)
    half = np.diff(edges) / 2
    mid = (edges[:-1] + edges[1:]) / 2
    z = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wz = (half[:, None] * w[None, :]).ravel()
    return z, wz


@dataclass(frozen=True, eq=False)
class ModalQuadrature:
    """Weighted Gauss-Legendre projection/synthesis pair for an operator.

    ``project(values)`` returns <g, phi_n>_rho for samples g(zeta_i) at the
    nodes; ``synthesize(coeffs)`` evaluates the expansion at the nodes.
    """

    op: RieszSpectralOperator
    order: int
    nodes: np.ndarray
    weights: np.ndarray
    basis: np.ndarray

    @classmethod
    def build(cls, op: RieszSpectralOperator, order: int | None = None,
              nodes_per_panel: int = 8) -> "ModalQuadrature":
        order = op.order if order is None else order
        # >= 4 nodes per oscillation period of the highest product phi_m phi_n
        panels = max(16, order)
        z, w = _composite_gauss(panels, nodes_per_panel)
        phi = op.basis(z, order)
        wr = w * op.weight(z)
        return cls(op, order, z, wr, phi)

    def project(self, values: np.ndarray) -> np.ndarray:
        return (self.weights * values) @ self.basis

    def synthesize(self, coeffs: np.ndarray) -> np.ndarray:
        return self.basis @ coeffs

    def gram(self) -> np.ndarray:
        return self.basis.T @ (self.weights[:, None] * self.basis)


def orthonormality_residual(op: RieszSpectralOperator, order: int | None = None) -> float:
    """max |<phi_m, phi_n>_rho - delta_mn| under weighted quadrature."""
    q = ModalQuadrature.build(op, order)
    g = q.gram()
    return float(np.max(np.abs(g - np.eye(g.shape[0]))))


# ---------------------------------------------------------------------------
# concrete operators


def reactor_eigenvalues(D: float, v: float, psi: float, order: int) -> np.ndarray:
    n = np.arange(order, dtype=float)
    lam = -(v**2 + 4 * D**2 * n**2 * np.pi**2) / (4 * D) - psi
    lam[0] = -psi
    return lam


def reactor_operator(D: float = 0.1, v: float = 0.4, psi: float = 2.8,
                     order: int = 100) -> RieszSpectralOperator:
    """Dispersion/convection/reaction generator with Neumann ends.

    A x = D x'' - v x' - psi x on [0, 1], x'(0) = x'(1) = 0, self-adjoint
    under the weight exp(-v zeta / D).
    """
    if D <= 0 or v <= 0 or psi <= 0:
        raise ValueError("D, v and psi must be positive")
    p = v / D
    c0 = np.sqrt(p / (1.0 - np.exp(-p)))

    def eigenfunction(n, zeta):
        n = np.asarray(n)
        zeta = np.asarray(zeta, dtype=float)
        k = 2.0 * n * np.pi * D / v
        amp = np.sqrt(2.0) / np.sqrt(1.0 + k**2)
        arg = np.pi * np.outer(zeta, n)
        out = (np.exp(0.5 * p * zeta)[:, None] * amp[None, :]
               * (np.sin(arg) - k[None, :] * np.cos(arg)))
        out[:, n == 0] = c0
        return out

    def weight(zeta):
        return np.exp(-p * np.asarray(zeta, dtype=float))

    return RieszSpectralOperator(reactor_eigenvalues(D, v, psi, order), eigenfunction,
                                 weight, {"D": D, "v": v, "psi": psi}, "reactor")


def neumann_laplacian_operator(order: int = 100, shift: float = 0.0) -> RieszSpectralOperator:
    """Laplacian on [0, 1] with homogeneous Neumann ends, minus ``shift``."""

    def eigenfunction(n, zeta):
        n = np.asarray(n)
        out = np.sqrt(2.0) * np.cos(np.pi * np.outer(np.asarray(zeta, float), n))
        out[:, n == 0] = 1.0
        return out

    lam = -(np.pi * np.arange(order)) ** 2 - shift
    return RieszSpectralOperator(lam, eigenfunction, lambda z: np.ones_like(np.asarray(z, float)),
                                 {"shift": shift}, "neumann-laplacian")


def diagonal_operator(eigenvalues, complete: bool = False) -> RieszSpectralOperator:
    """Generator with given eigenvalues on the Neumann cosine basis (unit weight).

    ``complete`` declares the list to be the whole spectrum; otherwise it is
    treated as the leading part of an infinite one.
    """
    base = neumann_laplacian_operator(len(eigenvalues))
    return RieszSpectralOperator(eigenvalues, base.eigenfunction, base.weight, {}, "custom-diagonal",
                                 complete=complete)


def operator_from_config(section: Mapping[str, str]) -> RieszSpectralOperator:
    """Build a reactor operator from a ``{D, v, psi, N}`` mapping."""
    get = lambda key, default: float(section.get(key, default))
    return reactor_operator(get("D", 0.1), get("v", 0.4), get("psi", 2.8),
                            int(section.get("N", section.get("modes", 100))))


def reactor_input_coefficients(op: RieszSpectralOperator) -> DualCoefficientSequence:
    """Coefficients of the Neumann inflow control B = -D delta_0."""
    D = op.params["D"]
    return DualCoefficientSequence(-D * op.basis([0.0])[0], eta=0.5)


def point_observation_coefficients(op: RieszSpectralOperator, zeta: float = 1.0) -> DualCoefficientSequence:
    """Coefficients phi_n(zeta) of the point evaluation x -> x(zeta)."""
    return DualCoefficientSequence(op.basis([zeta])[0], eta=0.5)
