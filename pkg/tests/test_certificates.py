import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from scipy.integrate import quad

from funnelbibo.certificates import (InsufficientDataError, MarginError, SingularModeError,
                                     admissibility_bound, appli_slack, check_appli_inequality,
                                     check_global_lipschitz_bibo, diagonal_bibo_sum,
                                     extended_system_certificate, feasibility_search,
                                     input_admissibility_bound, membership_exponent,
                                     reactor_certificate, reactor_m_half)
from funnelbibo.spectral import DualCoefficientSequence, diagonal_operator, mu_power
from funnelbibo.tails import power_tail

from conftest import PSI


def seq(values, eta=0.0):
    return DualCoefficientSequence(np.asarray(values, dtype=float), eta)


# -- tails ----------------------------------------------------------------


@given(st.floats(1.3, 4.0), st.integers(20, 200))
def test_power_tail_bounds_power_law(s, N):
    n = np.arange(1, 20000)
    a = n ** (-s)
    est = power_tail(a[:N])
    assert est.finite
    assert est.bound >= a[N:].sum() * (1 - 1e-9)


@given(st.floats(0.3, 0.95), st.integers(20, 120))
def test_power_tail_bounds_geometric(r, N):
    a = r ** np.arange(N)
    est = power_tail(a)
    exact_rest = r**N / (1 - r)
    assert est.bound >= exact_rest


def test_power_tail_flags_harmonic():
    assert not power_tail(1.0 / np.arange(1, 101)).finite


def test_power_tail_needs_data():
    with pytest.raises(ValueError):
        power_tail(np.ones(3))


# -- membership exponent ----------------------------------------------------


def test_membership_reactor(reactor, reactor_bc):
    b, _ = reactor_bc
    eta = membership_exponent(b, reactor.eigenvalues)
    assert eta == pytest.approx(0.25, abs=0.01)
    # the defining series converges at eta = 1/2: terms decay faster than n^-1
    terms = b.coefficients**2 / np.abs(reactor.eigenvalues) ** 1.0
    assert power_tail(terms).finite


def test_membership_zero_and_half_power(reactor):
    assert membership_exponent(seq(np.zeros(100)), reactor.eigenvalues) == 0.0
    mu = -reactor.eigenvalues
    assert membership_exponent(seq(mu**0.5), reactor.eigenvalues) == pytest.approx(0.75, abs=0.01)


def test_membership_needs_sixteen(reactor):
    with pytest.raises(InsufficientDataError):
        membership_exponent(seq(np.ones(15)), reactor.eigenvalues)


@given(st.floats(-1.0, 1.0))
def test_membership_power_law(p):
    lam = -(1.0 + np.arange(200)) ** 2
    b = np.abs(lam) ** (p / 2)
    # sum |lam|^(p - 2 eta) ~ sum n^(2p - 4 eta) converges iff eta > p/2 + 1/4
    assert membership_exponent(seq(b), lam) == pytest.approx(max(0.0, p / 2 + 0.25), abs=0.01)


# -- diagonal sum -----------------------------------------------------------


def test_diagonal_sum_reactor(reactor, reactor_bc):
    b, c = reactor_bc
    s = diagonal_bibo_sum(b, c, reactor.eigenvalues)
    assert s.finite and s.decay_exponent == pytest.approx(2.0, abs=0.05)
    assert s.total >= s.partial


def test_diagonal_sum_zero_and_harmonic():
    lam = -np.arange(1.0, 101.0)
    assert diagonal_bibo_sum(seq(np.ones(100)), seq(np.zeros(100)), lam).total == 0.0
    assert not diagonal_bibo_sum(seq(np.ones(100)), seq(np.ones(100)), lam).finite


def test_diagonal_sum_singular_mode():
    lam = np.array([0.0] + list(-np.arange(1.0, 20.0)))
    with pytest.raises(SingularModeError):
        diagonal_bibo_sum(seq(np.ones(20)), seq(np.ones(20)), lam)


@given(st.floats(0.2, 0.9), st.integers(20, 80))
def test_diagonal_tail_dominates_geometric_remainder(r, N):
    lam = -np.ones(N) * 2.0
    b = r ** np.arange(N)
    s = diagonal_bibo_sum(seq(b), seq(np.ones(N)), lam)
    assert s.tail_bound >= r**N / (1 - r) / 2.0


# -- admissibility ------------------------------------------------------------


def test_admissibility_alpha_zero_at_margin():
    op = diagonal_operator(-np.arange(1.0, 5.0) * 2)
    assert admissibility_bound(op, 0.0, op.omega) == pytest.approx(1 / op.omega)


def test_admissibility_reactor_example(reactor):
    m = reactor_m_half(PSI, 1.0)
    assert m == pytest.approx(0.71766, abs=1e-5)
    c2 = admissibility_bound(reactor, 0.5, 1.8, m)
    assert c2 == pytest.approx(m * math.sqrt(math.pi) / math.sqrt(1.8), rel=1e-14)
    assert c2 == pytest.approx(0.94812, abs=5e-5)


def test_admissibility_alpha_to_zero(reactor):
    delta = 1.5
    direct = quad(lambda s: math.exp(-delta * s), 0, np.inf)[0]
    values = [admissibility_bound(reactor, a, delta) for a in (1e-2, 1e-4, 1e-6)]
    assert abs(values[-1] - direct) < abs(values[0] - direct)
    assert values[-1] == pytest.approx(direct, rel=1e-4)


def test_admissibility_margin_errors(reactor):
    with pytest.raises(MarginError):
        admissibility_bound(reactor, 0.5, PSI)
    with pytest.raises(MarginError):
        admissibility_bound(reactor, 0.5, 0.0)
    with pytest.raises(ValueError):
        admissibility_bound(reactor, 1.0, 1.0)


@given(st.floats(0.1, 2.6), st.floats(0.01, 0.15))
def test_admissibility_decreasing_in_delta(delta, step):
    from funnelbibo.spectral import reactor_operator
    op = reactor_operator(order=30)
    assume(delta + step < op.omega)
    m = reactor_m_half(PSI, 1.0)
    assert admissibility_bound(op, 0.5, delta + step, m) < admissibility_bound(op, 0.5, delta, m)


@given(st.floats(0.05, 2.0), st.floats(0.01, 0.5))
def test_m_half_non_increasing_in_epsilon(eps, step):
    assert reactor_m_half(PSI, eps + step) <= reactor_m_half(PSI, eps)


# -- reactor inequality -------------------------------------------------------


def test_appli_examples():
    assert check_appli_inequality(2.8, 1.0, 1.8)
    assert 2 * math.e * 1.8 / math.pi == pytest.approx(3.11492, abs=1e-5)
    assert not check_appli_inequality(2.8, 0.6, 2.2)
    assert 2.8 / 0.6 == pytest.approx(4.667, abs=1e-3)
    assert 2 * math.e * 2.2 / math.pi == pytest.approx(3.807, abs=1e-3)


def test_appli_range():
    with pytest.raises(MarginError):
        check_appli_inequality(2.8, 1.0, 2.0)
    with pytest.raises(MarginError):
        check_appli_inequality(2.8, 1.0, 0.9)


@given(st.floats(0.5, 50.0), st.floats(0.01, 1.0), st.floats(0.0, 1.0))
def test_appli_false_for_small_delta(psi, eps, frac):
    assume(2 * eps <= psi)
    delta = eps + frac * (min(math.pi / 2, psi - eps) - eps)
    assume(eps <= delta <= min(math.pi / 2, psi - eps))
    assert not check_appli_inequality(psi, eps, delta)


@given(st.floats(1.0, 20.0), st.floats(0.05, 0.95), st.floats(0.0, 1.0))
def test_appli_equivalent_to_closed_form_bound(psi, eps_frac, delta_frac):
    from funnelbibo.spectral import reactor_operator
    op = reactor_operator(psi=psi, order=20)
    eps = eps_frac * psi / 2
    delta = eps + delta_frac * (psi - 2 * eps)
    assume(0 < delta < psi and abs(appli_slack(psi, eps, delta)) > 1e-9)
    c2 = admissibility_bound(op, 0.5, delta, reactor_m_half(psi, eps))
    assert check_appli_inequality(psi, eps, delta) == (c2 < 1)


def test_feasibility_examples():
    pair = feasibility_search(2.8)
    assert pair is not None and check_appli_inequality(2.8, pair.epsilon, pair.delta)
    assert abs(pair.epsilon - 1.0) < 0.1 and abs(pair.delta - 1.8) < 0.1
    assert feasibility_search(0.1) is None


def test_feasibility_exhaustive_small_psi():
    psi = 0.1
    for eps in np.linspace(1e-3, psi / 2, 200):
        for delta in np.linspace(eps, psi - eps, 20):
            assert not check_appli_inequality(psi, eps, delta)


def test_feasibility_asymptotics():
    # optimum of 2e(psi - eps)/pi - psi/eps sits at eps = sqrt(pi psi / (2 e))
    for psi in (50.0, 200.0, 1000.0):
        pair = feasibility_search(psi, resolution=1e-3)
        assert pair is not None
        assert pair.epsilon == pytest.approx(math.sqrt(math.pi * psi / (2 * math.e)), abs=2e-3)


# -- certificates -------------------------------------------------------------


def test_extended_reactor(reactor, reactor_bc):
    rep = extended_system_certificate(reactor, *reactor_bc)
    assert rep.ok and rep.bibo_abc and rep.admissible_b and rep.bibo_aic and rep.exponentially_stable


def test_extended_without_stability():
    lam = -np.arange(0.0, 40.0) ** 2
    op = diagonal_operator(lam)
    rep = extended_system_certificate(op, seq(np.ones(40)), seq(np.ones(40)))
    assert not rep.ok and not rep.exponentially_stable
    assert any("exponential stability" in r for r in rep.reasons)


def test_extended_unbounded_observation():
    lam = -(1.0 + np.arange(60.0))
    op = diagonal_operator(lam)
    c = np.abs(lam)  # grows like mu: not bounded on X_1/2
    rep = extended_system_certificate(op, seq(np.ones(60)), seq(c))
    assert not rep.bibo_aic and not rep.ok


def test_reactor_certificate_example(reactor):
    cert = reactor_certificate(reactor, 1.0, 1.0, 1.8)
    assert cert.condition_thm and cert.condition_appli and cert.verdict
    assert cert.c2_bound * cert.lipschitz_L == pytest.approx(0.94812, abs=5e-5)
    assert cert.c2_bound == pytest.approx(cert.M_alpha * math.gamma(1 - cert.alpha)
                                          / cert.delta ** (1 - cert.alpha), rel=1e-14)


def test_reactor_certificate_rejects_infeasible_pair(reactor):
    cert = reactor_certificate(reactor, 1.0, 0.6, 2.2)
    assert not cert.condition_appli and not cert.condition_thm and not cert.verdict
    assert cert.reasons


def test_linear_case_always_certified(reactor, reactor_bc):
    cert = check_global_lipschitz_bibo(reactor, *reactor_bc, 0.0, 0.5, 0.3)
    assert cert.condition_thm and cert.verdict
    assert cert.K == pytest.approx(cert.K1)


def test_verdict_rule(reactor, reactor_bc):
    for L in (0.2, 1.0, 1.5):
        for delta in (0.5, 1.8, 2.5):
            cert = check_global_lipschitz_bibo(reactor, *reactor_bc, L, 0.5, delta, 0.3)
            assert cert.verdict == (cert.extended.ok and (cert.condition_thm or cert.condition_appli))


def test_certificate_deterministic(reactor):
    a = reactor_certificate(reactor).to_keyvalue()
    b = reactor_certificate(reactor).to_keyvalue()
    assert a == b and "verdict = True" in a


def test_k2_condition_is_advisory(reactor, reactor_bc):
    cert = check_global_lipschitz_bibo(reactor, *reactor_bc, 1.0, 0.5, 1.8, 1.0, k2_estimate=5.0)
    assert cert.k2_condition is False and cert.verdict


def test_lower_estimates_below_upper_bounds(reactor):
    cert = reactor_certificate(reactor)
    assert 0 < cert.K1_lower <= cert.K1
    assert 0 < cert.K2_lower <= cert.K2


def test_input_admissibility_bound_dominates_step_response(reactor, reactor_bc):
    b, _ = reactor_bc
    C1 = input_admissibility_bound(reactor, b)
    mu = -reactor.eigenvalues
    t = np.linspace(0, 30, 301)
    x = -np.expm1(-np.outer(t, mu)) / mu * b.coefficients
    assert np.max(np.linalg.norm(x, axis=1)) <= C1


def test_complete_spectrum_uses_exact_sums():
    lam = np.array([-1.0, -4.0, -9.0])
    op = diagonal_operator(lam, complete=True)
    b, c = seq([1.0, 2.0, 3.0]), seq([1.0, -1.0, 0.5])
    s = diagonal_bibo_sum(b, c, lam, complete=True)
    assert s.tail_bound == 0.0 and s.total == pytest.approx(1 + 0.5 + 1.5 / 9)
    assert input_admissibility_bound(op, b) == pytest.approx(math.sqrt(1 + 4 / 16 + 9 / 81))
    assert membership_exponent(b, lam, complete=True) == 0.0
    with pytest.raises(ValueError):
        diagonal_bibo_sum(b, c, lam)
