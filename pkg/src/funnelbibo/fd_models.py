"""Method-of-lines discretisations of the tubular reactor and the cubic heat equation.

Both use nodes zeta_i = i/n, i = 0..n, with ghost nodes carrying the Neumann
conditions.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np


def saturating(x):
    """The Lipschitz (L = 1) nonlinearity |x| / (|x| + 1)."""
    ax = np.abs(x)
    return ax / (ax + 1.0)


def saturating_derivative(x):
    return np.sign(x) / (np.abs(x) + 1.0) ** 2


@dataclass(frozen=True)
class ReactorParams:
    D: float = 0.1
    v: float = 0.4
    psi: float = 2.8
    a1: float = -1.0
    a2: float = 2.0
    R: float = 3.0
    n: int = 100
    nonlinear: bool = True

    def __post_init__(self):
        for name in ("D", "v", "psi"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.R < 0:
            raise ValueError("R must be non-negative")
        if self.n < 2:
            raise ValueError("need at least two grid cells")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n + 1)

    @property
    def peclet(self) -> float:
        return self.v * self.h / self.D

    def with_(self, **changes) -> "ReactorParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class GridState:
    values: np.ndarray
    x_F: float = 0.0

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 1 or vals.size < 3:
            raise ValueError("grid values must be a 1-D array of length n + 1")
        if not np.all(np.isfinite(vals)) or not np.isfinite(self.x_F):
            raise ValueError("grid state must be finite")
        object.__setattr__(self, "values", vals)

    def pack(self) -> np.ndarray:
        return np.append(self.values, self.x_F)

    @classmethod
    def unpack(cls, y) -> "GridState":
        return cls(y[:-1], float(y[-1]))


def reactor_pde_rhs(p: ReactorParams, x: np.ndarray, eta: float) -> np.ndarray:
    """Semi-discrete D x'' - v x' - psi x + f(x) with x'(0) = eta, x'(1) = 0."""
    h = p.h
    ghost_l = x[1] - 2.0 * h * eta
    ghost_r = x[-2]
    xe = np.concatenate(([ghost_l], x, [ghost_r]))
    diff = p.D * (xe[2:] - 2.0 * xe[1:-1] + xe[:-2]) / h**2
    if p.peclet < 2:
        conv = p.v * (xe[2:] - xe[:-2]) / (2.0 * h)
    else:
        conv = p.v * (xe[1:-1] - xe[:-2]) / h
    out = diff - conv - p.psi * x
    if p.nonlinear:
        out = out + saturating(x)
    return out


def reactor_rhs(p: ReactorParams, s: GridState, eta: float, t: float = 0.0, u: float = 0.0) -> GridState:
    """Time derivative of the coupled tube + stirred tank state.

    The tank obeys x_F' = a1 x_F + a2 u + R x(1). ``eta`` is the inflow
    gradient; in the closed loop it equals x_F.
    """
    dx = reactor_pde_rhs(p, s.values, eta)
    dxf = p.a1 * s.x_F + p.a2 * u + p.R * s.values[-1]
    return GridState(dx, dxf)


def reactor_matrix(p: ReactorParams) -> np.ndarray:
    """Linear part (f = 0, eta = 0) of :func:`reactor_pde_rhs` as a dense matrix."""
    lin = p.with_(nonlinear=False)
    m = p.n + 1
    return np.column_stack([reactor_pde_rhs(lin, e, 0.0) for e in np.eye(m)])


def reactor_sparsity(n: int, coupled: bool = True) -> np.ndarray:
    """Jacobian pattern of the tube (+ tank as last component when ``coupled``)."""
    m = n + 1 + int(coupled)
    pat = np.zeros((m, m), dtype=bool)
    idx = np.arange(n + 1)
    for off in (-1, 0, 1):
        j = idx + off
        ok = (j >= 0) & (j <= n)
        pat[idx[ok], j[ok]] = True
    if coupled:
        pat[0, n + 1] = True
        pat[n + 1, n] = True
        pat[n + 1, n + 1] = True
    return pat


def discrete_observation(s: GridState) -> float:
    """x at zeta = 1."""
    return float(s.values[-1])


def weighted_energy(p: ReactorParams, x: np.ndarray) -> float:
    """Trapezoidal sum rho(zeta_i) x_i^2 h with rho = exp(-v zeta / D)."""
    rho = np.exp(-p.v / p.D * p.grid)
    return float(np.trapezoid(rho * x**2, dx=p.h))


def weighted_l2(p_grid: np.ndarray, x: np.ndarray, weight=None) -> float:
    w = np.ones_like(p_grid) if weight is None else weight(p_grid)
    return float(np.sqrt(np.trapezoid(w * x**2, p_grid)))


# ---------------------------------------------------------------------------
# heat equation with cubic sink


@dataclass(frozen=True)
class HeatGrid:
    n: int = 100

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n + 1)


def neumann_laplacian(x: np.ndarray, h: float) -> np.ndarray:
    xe = np.concatenate(([x[1]], x, [x[-2]]))
    return (xe[2:] - 2.0 * xe[1:-1] + xe[:-2]) / h**2


def heat_rhs(grid: HeatGrid, x: np.ndarray, b: np.ndarray, u: float, t: float = 0.0) -> np.ndarray:
    """Laplacian - x^3 + b(zeta) u with homogeneous Neumann ends."""
    return neumann_laplacian(x, grid.h) - x**3 + b * u


def heat_sparsity(n: int) -> np.ndarray:
    return reactor_sparsity(n, coupled=False)


def write_snapshots_csv(path, zeta: np.ndarray, times: np.ndarray, values: np.ndarray) -> None:
    """Write ``zeta,t,value`` triples; ``values`` has shape (len(times), len(zeta))."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["zeta", "t", "value"])
        for ti, row in zip(times, values):
            for zi, xi in zip(zeta, row):
                w.writerow([f"{zi:.17g}", f"{ti:.17g}", f"{xi:.17g}"])

