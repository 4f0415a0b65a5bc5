import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from funnelbibo.fd_models import HeatGrid
from funnelbibo.heat_iss import iss_rates, lyapunov_eval, lyapunov_terms, verify_iss

GRID = HeatGrid(100)
Z = GRID.grid


def test_lyapunov_examples():
    assert lyapunov_eval(GRID, np.zeros_like(Z)) == (0.0, 0.0, 0.0)
    V, W, lhs = lyapunov_eval(GRID, np.ones_like(Z))
    assert (V, W, lhs) == pytest.approx((2.0, 1.0, 0.0), abs=1e-12)
    V, W, _ = lyapunov_eval(GRID, np.cos(math.pi * Z))
    # exact: 1/2 + pi^2 + 3/8 and pi^2/2 + 3/8; forward differences are O(h^2)
    assert V == pytest.approx(0.5 + math.pi**2 + 0.375, abs=2e-3)
    assert W == pytest.approx(math.pi**2 / 2 + 0.375, abs=2e-3)
    with pytest.raises(ValueError):
        lyapunov_eval(GRID, np.ones_like(Z), seminorm="l2")
    with pytest.raises(ValueError):
        lyapunov_eval(GRID, np.ones(5))


profiles = st.lists(st.floats(-3, 3), min_size=4, max_size=4).map(
    lambda c: sum(a * np.cos(k * math.pi * Z) for k, a in enumerate(c)))


@given(profiles)
def test_lower_sandwich(x):
    V, W, _ = lyapunov_eval(GRID, x)
    assert W <= V + 1e-12


@given(profiles)
def test_upper_sandwich_where_coercive(x):
    l2, grad, quart = lyapunov_terms(GRID, x)
    V, W, _ = lyapunov_eval(GRID, x)
    if l2 <= grad + 2 * quart:
        assert V <= 3 * W + 1e-9


def test_upper_sandwich_fails_for_small_constants():
    V, W, _ = lyapunov_eval(GRID, np.full_like(Z, 0.5))
    assert V > 3 * W


def test_rates():
    rho, lam = iss_rates(1.0, 1.0, 1.0)
    assert rho == pytest.approx(1 / 3) and lam == pytest.approx(3.0)
    assert iss_rates(0.5, 1.5, 2.0) == pytest.approx((0.5, 2 * (2 + 4 / 3)))
    for bad in ((0.0, 1.0), (1.0, 2.0), (-1.0, 1.0)):
        with pytest.raises(ValueError):
            iss_rates(*bad, 1.0)


def test_envelope_holds_under_constant_input():
    rep = verify_iss(1.0, 1.0, 0.0, 5.0, n=60)
    assert rep.ok and rep.v_decay_ok
    assert math.isnan(rep.first_violation)


def test_free_decay_from_constant_state():
    rep = verify_iss(1.0, 0.0, 1.0, 5.0, n=60)
    assert rep.ok and rep.v_decay_ok
    assert np.all(np.diff(rep.envelope) <= 1e-15)
    assert np.max(rep.lhs) < 1e-12


@pytest.mark.slow
def test_v_decay_failure_is_reported():
    rep = verify_iss(1.0, 0.0, 1.0, 20.0, n=60)
    assert rep.ok and not rep.v_decay_ok
    assert 10.0 < rep.v_decay_violation < 13.0


def test_full_norm_option_reports_excess():
    rep = verify_iss(1.0, 0.0, lambda z: np.cos(2 * math.pi * z), 1.0, n=60, seminorm="h1")
    assert not rep.ok and rep.max_excess > 0
    assert rep.first_violation == 0.0


def test_samples_roundtrip():
    rep = verify_iss(0.0, 0.0, lambda z: np.cos(math.pi * z), 0.5, n=40)
    s = rep.samples()
    assert len(s) == rep.t.size and all(x.lower_sandwich_ok for x in s)
