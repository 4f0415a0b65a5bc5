"""Sufficient conditions for L-infinity BIBO stability of diagonal semilinear systems.

Everything here is closed-form arithmetic on eigenvalues and input/output
coefficient sequences; no time stepping.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import gamma as gamma_fn

from .spectral import (DualCoefficientSequence, RieszSpectralOperator, analytic_constant,
                       mu_power, point_observation_coefficients, reactor_input_coefficients)
from .tails import TailEstimate, power_tail


class InsufficientDataError(ValueError):
    pass


class SingularModeError(ValueError):
    pass


class MarginError(ValueError):
    """A shift delta that destroys exponential stability or violates its range."""


# ---------------------------------------------------------------------------
# coefficient-sequence tests


def membership_exponent(b: DualCoefficientSequence, eigenvalues, complete: bool = False) -> float:
    """Infimum eta* with sum |b_n|^2 / |lambda_n|^(2 eta) < infinity.

    Fits |b_n|^2 ~ |lambda_n|^p and |lambda_n| ~ n^g on the upper half of the
    modes; the series then behaves like sum n^(g (p - 2 eta)), which converges
    iff eta > p/2 + 1/(2 g). A ``complete`` (finite) spectrum gives 0.
    """
    coeffs = np.asarray(b.coefficients, dtype=float)
    if complete:
        return 0.0
    lam = np.asarray(eigenvalues, dtype=float)[:coeffs.size]
    if coeffs.size < 16:
        raise InsufficientDataError("at least 16 coefficients are needed")
    n = np.arange(coeffs.size)
    window = (n >= coeffs.size // 2) & (coeffs != 0)
    if not np.any(window):
        return 0.0
    if window.sum() < 4:
        raise InsufficientDataError("too few non-zero coefficients in the tail")
    mu = np.abs(lam[window])
    g = np.polyfit(np.log(n[window]), np.log(mu), 1)[0]
    p = np.polyfit(np.log(mu), np.log(coeffs[window] ** 2), 1)[0]
    return float(max(0.0, p / 2 + 1 / (2 * g)))


@dataclass(frozen=True)
class DiagonalSum:
    partial: float
    tail_bound: float
    finite: bool
    decay_exponent: float

    @property
    def total(self) -> float:
        return self.partial + self.tail_bound


def _series(terms, complete: bool) -> TailEstimate:
    if complete:
        return TailEstimate(float(np.sum(np.abs(terms))), 0.0, math.inf, True)
    return power_tail(terms)


def diagonal_bibo_sum(b: DualCoefficientSequence, c: DualCoefficientSequence, eigenvalues,
                      complete: bool = False) -> DiagonalSum:
    """sum_n |b_n c_n| / |Re lambda_n| with an integral-comparison tail bound."""
    bn = np.asarray(b.coefficients, dtype=float)
    cn = np.asarray(c.coefficients, dtype=float)
    lam = np.asarray(eigenvalues, dtype=float)
    if not (bn.size == cn.size <= lam.size):
        raise ValueError("sequences must be aligned")
    lam = lam[:bn.size]
    if np.any(lam == 0):
        raise SingularModeError("mode with zero real part")
    tail = _series(np.abs(bn * cn) / np.abs(lam), complete)
    return DiagonalSum(tail.partial, tail.bound, tail.finite, tail.exponent)


# ---------------------------------------------------------------------------
# admissibility constants


def admissibility_bound(op: RieszSpectralOperator, alpha: float, delta: float,
                        m_alpha: float | None = None) -> float:
    """Upper bound M_alpha Gamma(1 - alpha) / delta^(1 - alpha) on C_{2,inf}.

    ``m_alpha`` defaults to the exact modal constant of ``op``. delta = omega
    is only accepted for alpha = 0 (no smoothing needed).
    """
    if not 0 <= alpha < 1:
        raise ValueError("alpha must lie in [0, 1)")
    if delta <= 0:
        raise MarginError("delta must be positive")
    if delta > op.omega or (alpha > 0 and delta >= op.omega):
        raise MarginError(f"delta={delta} leaves no stability margin (omega={op.omega})")
    if m_alpha is None:
        m_alpha = analytic_constant(op, alpha, delta)
    return float(m_alpha * gamma_fn(1 - alpha) / delta ** (1 - alpha))


def reactor_m_half(psi: float, epsilon: float) -> float:
    """Closed-form M_{1/2} = sqrt(max{psi/eps, e}) (2e)^{-1/2} for the reactor."""
    return math.sqrt(max(psi / epsilon, math.e)) / math.sqrt(2 * math.e)


def input_admissibility_bound(op: RieszSpectralOperator, b: DualCoefficientSequence,
                              alpha: float = 0.0) -> float:
    """Upper bound on the infinite-time L-inf admissibility constant of (-A)^alpha B.

    Each mode obeys |int e^{lambda(t-s)} u ds| <= ||u|| / mu, so the state norm
    is at most sqrt(sum b_n^2 mu_n^(2 alpha - 2)).
    """
    mu = -op.eigenvalues[:b.coefficients.size]
    if np.any(mu <= 0):
        raise MarginError("operator is not exponentially stable")
    terms = b.coefficients ** 2 * mu_power(mu, 2 * alpha) / mu ** 2
    return math.sqrt(_series(terms, op.complete).total)


def observation_norm(op: RieszSpectralOperator, c: DualCoefficientSequence, alpha: float) -> float:
    """Norm of x -> sum c_n x_n as a functional on X_alpha (spectral norm)."""
    mu = -op.eigenvalues[:c.coefficients.size]
    terms = c.coefficients ** 2 / mu_power(mu, 2 * alpha)
    return math.sqrt(_series(terms, op.complete).total)


# ---------------------------------------------------------------------------
# reactor feasibility inequality


def check_appli_inequality(psi: float, epsilon: float, delta: float) -> bool:
    """max{psi/eps, e} < 2 e delta / pi, with delta restricted to [eps, psi - eps]."""
    if epsilon <= 0:
        raise MarginError("epsilon must be positive")
    tol = 1e-12 * max(1.0, abs(psi))
    if not (epsilon - tol <= delta <= psi - epsilon + tol):
        raise MarginError(f"delta={delta} outside [{epsilon}, {psi - epsilon}]")
    return max(psi / epsilon, math.e) < 2 * math.e * delta / math.pi


def appli_slack(psi: float, epsilon: float, delta: float) -> float:
    return 2 * math.e * delta / math.pi - max(psi / epsilon, math.e)


@dataclass(frozen=True)
class FeasiblePair:
    epsilon: float
    delta: float
    slack: float


def feasibility_search(psi: float, resolution: float = 1e-3) -> FeasiblePair | None:
    """Search {0 < eps, eps <= delta <= psi - eps} for the largest positive slack.

    The slack is increasing in delta, so for each eps on the grid the best
    delta is psi - eps.
    """
    if psi <= 0:
        raise ValueError("psi must be positive")
    steps = int(np.floor(psi / 2 / resolution + 1e-9))
    if steps < 1:
        return None
    eps = np.round(np.arange(1, steps + 1) * resolution, 12)
    delta = np.round(psi - eps, 12)
    slack = 2 * math.e * delta / math.pi - np.maximum(psi / eps, math.e)
    i = int(np.argmax(slack))
    if slack[i] <= 0:
        return None
    return FeasiblePair(float(eps[i]), float(delta[i]), float(slack[i]))


# ---------------------------------------------------------------------------
# extended-system conditions


@dataclass(frozen=True)
class ExtendedSystemReport:
    bibo_abc: bool
    admissible_b: bool
    bibo_aic: bool
    exponentially_stable: bool
    input_exponent: float
    observation_exponent: float
    abc_sum: float
    reasons: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return self.bibo_abc and self.admissible_b and self.bibo_aic and self.exponentially_stable


def extended_system_certificate(op: RieszSpectralOperator, b: DualCoefficientSequence,
                                c: DualCoefficientSequence, alpha: float = 0.5) -> ExtendedSystemReport:
    """Check BIBO of (A, [B I], [C; I]) through its three sufficient conditions.

    * Sigma(A, B, C) BIBO: sum |b_n c_n| / |lambda_n| finite;
    * (-A)^alpha B admissible: B in X_{-eta} with eta + alpha < 1;
    * Sigma(A, I, C) BIBO: C bounded on X_{1/2}, i.e. c in X_{-eta_c}, eta_c < 1/2;
    * exponential stability, omega > 0.
    """
    reasons = []
    stable = op.is_exponentially_stable
    if not stable:
        reasons.append("exponential stability fails: omega <= 0")

    try:
        s = diagonal_bibo_sum(b, c, op.eigenvalues, op.complete)
        abc, abc_sum = s.finite, s.total
        if not abc:
            reasons.append("sum |b_n c_n| / |lambda_n| diverges")
    except SingularModeError as exc:
        abc, abc_sum = False, math.inf
        reasons.append(f"Sigma(A,B,C) not BIBO: {exc}")

    eta_b = membership_exponent(b, op.eigenvalues, op.complete)
    admissible = eta_b + alpha < 1
    if not admissible:
        reasons.append(f"(-A)^alpha B not admissible: eta*={eta_b:.4g}, alpha={alpha}")

    eta_c = membership_exponent(c, op.eigenvalues, op.complete)
    aic = eta_c < 0.5
    if not aic:
        reasons.append(f"C unbounded on X_1/2: eta*={eta_c:.4g}")

    return ExtendedSystemReport(abc, admissible, aic, stable, eta_b, eta_c, abc_sum, tuple(reasons))


# ---------------------------------------------------------------------------
# the certificate


@dataclass(frozen=True)
class BiboCertificate:
    lipschitz_L: float
    alpha: float
    delta: float
    epsilon: float | None
    M_alpha: float
    c2_bound: float
    condition_thm: bool
    condition_appli: bool
    extended: ExtendedSystemReport
    C1_bound: float
    K1: float
    K2: float
    K: float
    K_offset: float
    K1_lower: float
    K2_lower: float
    k2_condition: bool | None
    verdict: bool
    reasons: tuple[str, ...] = field(default=())

    def to_keyvalue(self) -> str:
        """Flat ``key = value`` rendering, sorted, floats in repr form."""
        flat = {}
        for key, value in asdict(self).items():
            if key == "extended":
                for k2, v2 in value.items():
                    flat[f"extended.{k2}"] = v2
            else:
                flat[key] = value
        flat["extended.ok"] = self.extended.ok
        lines = []
        for key in sorted(flat):
            value = flat[key]
            if isinstance(value, (tuple, list)):
                value = "; ".join(value)
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    def report(self) -> str:
        e = self.extended
        yes = lambda ok: "holds" if ok else "FAILS"
        lines = [
            "L-infinity BIBO certificate",
            f"  Lipschitz constant L         {self.lipschitz_L:.6g}",
            f"  alpha / delta / epsilon      {self.alpha:.6g} / {self.delta:.6g} / {self.epsilon}",
            f"  M_alpha                      {self.M_alpha:.6g}",
            f"  C2 bound                     {self.c2_bound:.6g}",
            f"  C2 bound * L < 1             {yes(self.condition_thm)} ({self.c2_bound * self.lipschitz_L:.6g})",
            f"  reactor inequality           {yes(self.condition_appli)}",
            f"  Sigma(A,B,C) BIBO            {yes(e.bibo_abc)} (sum = {e.abc_sum:.6g})",
            f"  B admissible (eta*={e.input_exponent:.3f})  {yes(e.admissible_b)}",
            f"  Sigma(A,I,C) BIBO (eta*={e.observation_exponent:.3f})  {yes(e.bibo_aic)}",
            f"  exponential stability        {yes(e.exponentially_stable)}",
            f"  output bound ||y|| <= K ||u|| + K0 with K = {self.K:.6g}, K0 = {self.K_offset:.6g}",
            f"  (K1 <= {self.K1:.6g}, K2 <= {self.K2:.6g}; step-response lower estimates "
            f"K1 >= {self.K1_lower:.6g}, K2 >= {self.K2_lower:.6g})",
            f"  verdict                      {'BIBO stable' if self.verdict else 'not certified'}",
        ]
        lines += [f"  reason: {r}" for r in self.reasons]
        return "\n".join(lines) + "\n"


def step_response_gains(op: RieszSpectralOperator, b: DualCoefficientSequence,
                        c: DualCoefficientSequence, alpha: float,
                        horizon: float = 50.0, samples: int = 2001) -> tuple[float, float]:
    """Empirical lower estimates of K1 and K2 from unit-step responses.

    Simulates the extended linear system exactly (mode-wise) from x0 = 0 and
    reports sup_t (|C x(t)| + ||x(t)||_alpha) for u = 1 (K1) and for the unit
    disturbances u~ = e_0 and u~ proportional to c_n / mu_n (K2).
    """
    mu = -op.eigenvalues[:b.coefficients.size]
    t = np.linspace(0.0, horizon, samples)
    step = -np.expm1(-np.outer(t, mu)) / mu
    w = mu_power(mu, alpha)
    cn = c.coefficients

    def gain(forcing):
        x = step * forcing
        return float(np.max(np.abs(x @ cn) + np.linalg.norm(x * w, axis=1)))

    k1 = gain(b.coefficients)
    e0 = np.zeros_like(mu)
    e0[0] = 1.0
    d = cn / mu
    candidates = [e0] + ([d / np.linalg.norm(d)] if np.any(d) else [])
    k2 = max(gain(v) for v in candidates)
    return k1, k2


def check_global_lipschitz_bibo(op: RieszSpectralOperator, b: DualCoefficientSequence,
                                c: DualCoefficientSequence, lipschitz: float,
                                alpha: float, delta: float, epsilon: float | None = None,
                                *, f0_norm: float = 0.0, k2_estimate: float | None = None,
                                m_alpha: float | None = None) -> BiboCertificate:
    """Evaluate every sufficient condition and assemble a certificate.

    With ``epsilon`` given on a reactor operator the closed-form M_{1/2}(psi,
    eps) is used (as long as alpha = 1/2); otherwise the exact modal constant.
    Infeasible inputs produce ``verdict=False`` with reasons, never an error.
    """
    reasons = []
    psi = op.params.get("psi")
    if m_alpha is None:
        if epsilon is not None and psi is not None and alpha == 0.5:
            m_alpha = reactor_m_half(psi, epsilon)
        else:
            try:
                m_alpha = analytic_constant(op, alpha, delta)
            except ValueError as exc:
                m_alpha = math.inf
                reasons.append(str(exc))
    try:
        c2 = admissibility_bound(op, alpha, delta, m_alpha)
    except MarginError as exc:
        c2 = math.inf
        reasons.append(str(exc))
    condition_thm = c2 * lipschitz < 1
    if not condition_thm:
        reasons.append(f"C2 bound * L = {c2 * lipschitz:.6g} >= 1")

    condition_appli = False
    if epsilon is not None and psi is not None and alpha == 0.5 and lipschitz <= 1:
        try:
            condition_appli = check_appli_inequality(psi, epsilon, delta)
        except MarginError as exc:
            reasons.append(str(exc))

    extended = extended_system_certificate(op, b, c, alpha)
    reasons.extend(extended.reasons)

    if extended.exponentially_stable:
        c1 = input_admissibility_bound(op, b, alpha)
        k1 = extended.abc_sum + c1
        k2 = (observation_norm(op, c, alpha) + 1.0) * c2
        k1_low, k2_low = step_response_gains(op, b, c, alpha)
    else:
        c1 = k1 = k2 = math.inf
        k1_low = k2_low = math.nan

    if condition_thm:
        denom = 1.0 - c2 * lipschitz
        K = k1 + k2 * lipschitz * c1 / denom
        K0 = (k2 + k2 * c2 * lipschitz / denom) * f0_norm
    else:
        K = K0 = math.inf

    k2_condition = None if k2_estimate is None else bool(k2_estimate * lipschitz < 1)
    verdict = extended.ok and (condition_thm or condition_appli)
    return BiboCertificate(float(lipschitz), float(alpha), float(delta),
                           None if epsilon is None else float(epsilon), float(m_alpha), float(c2),
                           bool(condition_thm), bool(condition_appli), extended, float(c1),
                           float(k1), float(k2), float(K), float(K0), float(k1_low), float(k2_low),
                           k2_condition, bool(verdict), tuple(reasons))


def reactor_certificate(op: RieszSpectralOperator, lipschitz: float = 1.0,
                        epsilon: float | None = None, delta: float | None = None) -> BiboCertificate:
    """Certificate for the reactor with B = -D delta_0, C = evaluation at 1.

    Missing (epsilon, delta) are found by :func:`feasibility_search`; when no
    feasible pair exists, delta falls back to omega / 2.
    """
    if epsilon is None or delta is None:
        pair = feasibility_search(op.params["psi"])
        if pair is not None:
            epsilon, delta = pair.epsilon, pair.delta
        else:
            delta = op.omega / 2 if delta is None else delta
            epsilon = min(delta, op.omega - delta) if epsilon is None else epsilon
    return check_global_lipschitz_bibo(op, reactor_input_coefficients(op),
                                       point_observation_coefficients(op, 1.0),
                                       lipschitz, 0.5, delta, epsilon)
