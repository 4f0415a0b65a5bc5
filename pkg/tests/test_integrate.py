import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from funnelbibo.integrate import (IntegrationError, IntegratorConfig, MaxStepsExceeded, StepUnderflow,
                                  fd_jacobian, group_columns, integrate)

from conftest import closed_form_eigenvalue

LAM = np.array([closed_form_eigenvalue(n) for n in range(5)])


def linear(lam):
    return dict(jac=lambda t, y: np.diag(lam), autonomous=True)


def fixed(h):
    return IntegratorConfig(h_min=h, h_max=h)


def test_scalar_decay():
    cfg = IntegratorConfig()
    tr = integrate(lambda t, y: -y, [1.0], (0, 1), cfg)
    assert abs(tr.y[-1, 0] - math.exp(-1)) < 10 * cfg.rtol


def test_reactor_modes():
    cfg = IntegratorConfig()
    tr = integrate(lambda t, y: LAM * y, np.ones(5), (0, 1), cfg, **linear(LAM))
    assert np.max(np.abs(tr.y[-1] - np.exp(LAM))) < 10 * cfg.rtol


def test_stiff_tracking():
    def ref(t):
        # exact solution of y' = -1e4 (y - cos t), y(0) = 0
        k = 1e4
        return k * (k * np.cos(t) + np.sin(t) - k * np.exp(-k * t)) / (k * k + 1)

    tr = integrate(lambda t, y: -1e4 * (y - np.cos(t)), [0.0], (0, 2), IntegratorConfig(rtol=1e-6, atol=1e-9))
    t = np.linspace(0.01, 2, 50)
    assert np.max(np.abs(tr(t)[:, 0] - np.cos(t))) < 1e-3
    assert np.max(np.abs(tr(t)[:, 0] - ref(t))) < 1e-3
    assert tr.naccept < 2000


def test_explicit_reference_for_stiff_problem():
    # tiny-step explicit Euler oracle on the transient
    h, y, t = 1e-6, 0.0, 0.0
    for _ in range(2000):
        y += h * (-1e4 * (y - math.cos(t)))
        t += h
    tr = integrate(lambda s, v: -1e4 * (v - np.cos(s)), [0.0], (0, t), IntegratorConfig(rtol=1e-7, atol=1e-10))
    assert tr.y[-1, 0] == pytest.approx(y, abs=1e-4)


def _fixed_errors(steps):
    out = []
    for h in steps:
        tr = integrate(lambda t, y: LAM * y, np.ones(5), (0, 1), fixed(h), **linear(LAM))
        out.append(np.max(np.abs(tr.y[-1] - np.exp(LAM))))
    return np.array(out)


def test_step_halving_order_two():
    errs = _fixed_errors([0.04, 0.02, 0.01, 0.005])
    assert np.mean(errs[:-1] / errs[1:]) >= 2.8


def test_tolerance_halving_rate():
    # error per step ~ rtol gives global error ~ rtol^(2/3) for an order-2 method
    errs = []
    for rtol in (1e-5, 5e-6, 2.5e-6, 1.25e-6):
        cfg = IntegratorConfig(rtol=rtol, atol=rtol * 1e-3)
        tr = integrate(lambda t, y: LAM * y, np.ones(5), (0, 1), cfg, **linear(LAM))
        errs.append(np.max(np.abs(tr.y[-1] - np.exp(LAM))))
    errs = np.array(errs)
    assert np.mean(errs[:-1] / errs[1:]) == pytest.approx(2 ** (2 / 3), rel=0.1)


@given(st.floats(-1e6, -1e-3), st.floats(1e-3, 10.0))
def test_no_growth_on_negative_axis(lam, h):
    tr = integrate(lambda t, y: lam * y, [1.0], (0, 5 * h), fixed(h), **linear(np.array([lam])))
    assert np.all(np.abs(tr.y[1:, 0]) <= np.abs(tr.y[:-1, 0]) + 1e-15)


def test_dense_output_hits_nodes_and_rejects_outside():
    tr = integrate(lambda t, y: -y, [1.0], (0, 1), IntegratorConfig())
    assert np.allclose(tr(tr.t)[:, 0], tr.y[:, 0], rtol=0, atol=1e-15)
    assert abs(tr(0.5)[0, 0] - math.exp(-0.5)) < 1e-5
    with pytest.raises(ValueError):
        tr(1.5)


def test_fixed_grid_has_no_drift():
    tr = integrate(lambda t, y: -y, [1.0], (0, 2), fixed(0.01))
    assert tr.t[100] == 1.0 and tr.t[-1] == 2.0


def test_grouped_jacobian_matches_dense():
    n = 12
    A = np.diag(-2 * np.ones(n)) + np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1)
    rhs = lambda t, y: A @ y - y**3
    y = np.linspace(-1, 1, n)
    pattern = A != 0
    groups = group_columns(pattern)
    assert len(groups) == 3
    J = fd_jacobian(rhs, 0.0, y, rhs(0.0, y), groups, pattern)
    assert np.allclose(J, A - np.diag(3 * y**2), atol=1e-6)


@given(st.integers(2, 30), st.integers(0, 2**31 - 1))
def test_groups_are_structurally_orthogonal(n, seed):
    rng = np.random.default_rng(seed)
    pattern = rng.random((n, n)) < 0.2
    groups = group_columns(pattern)
    assert sorted(np.concatenate(groups).tolist()) == list(range(n))
    for g in groups:
        assert np.all(pattern[:, g].sum(axis=1) <= 1)


def test_max_steps():
    with pytest.raises(MaxStepsExceeded):
        integrate(lambda t, y: -y, [1.0], (0, 1), IntegratorConfig(h_min=1e-3, h_max=1e-3, max_steps=10))


def test_underflow_on_blow_up():
    with pytest.raises((StepUnderflow, MaxStepsExceeded)):
        integrate(lambda t, y: y**2, [1.0], (0, 2), IntegratorConfig(h_min=1e-10, max_steps=100000))


def test_non_finite_start():
    with pytest.raises(IntegrationError):
        integrate(lambda t, y: np.full_like(y, np.nan), [1.0], (0, 1))


def test_config_validation():
    for bad in (dict(rtol=0), dict(atol=-1), dict(h_min=1.0, h_max=0.5), dict(max_steps=0)):
        with pytest.raises(ValueError):
            IntegratorConfig(**bad)
    with pytest.raises(ValueError):
        integrate(lambda t, y: y, [1.0], (1, 0))


def test_on_step_sees_every_accepted_step():
    seen = []
    tr = integrate(lambda t, y: -y, [1.0], (0, 1), IntegratorConfig(), on_step=lambda *a: seen.append(a[2]))
    assert np.array_equal(np.array(seen), tr.t[1:])
