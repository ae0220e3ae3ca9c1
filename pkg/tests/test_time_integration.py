from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from entropy_cg import time_integration as ti
from entropy_cg.solver import make_space, run


def zero_rhs(u, t):
    return np.zeros_like(u)


@pytest.mark.parametrize("name", sorted(ti.INTEGRATORS))
def test_zero_rhs_is_identity(name):
    u = np.array([0.3, -1.0, 2.0])
    np.testing.assert_array_equal(ti.integrator(name)(zero_rhs, u, 0.1), u)


def test_ssprk3_stability_polynomial():
    z = 0.1
    out = ti.ssprk3_step(lambda u, t: -u, np.array([1.0]), z)[0]
    assert out == pytest.approx(1 - z + z**2 / 2 - z**3 / 6, abs=1e-16)
    assert abs(out - np.exp(-z)) == pytest.approx(z**4 / 24, rel=0.1)


def test_rk76_weights():
    b = [Fraction(11, 120), 0, Fraction(27, 40), Fraction(27, 40), Fraction(-4, 15), Fraction(-4, 15),
         Fraction(11, 120)]
    assert sum(b) == 1
    np.testing.assert_allclose(ti.RK76.b, [float(x) for x in b], rtol=1e-15)
    assert ti.RK76.stages == 7


@pytest.mark.parametrize("tableau", [ti.RK76, ti.SSPRK3])
def test_generic_step_matches_taylor_series(tableau):
    # the stability function of an order-q method agrees with exp through z^q
    z = 0.05
    out = ti.explicit_rk_step(tableau, lambda u, t: -u, np.array([1.0]), z)[0]
    assert abs(out - np.exp(-z)) < 2 * z ** (tableau.order + 1)


def test_shu_osher_form_matches_tableau():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(4, 4))
    u = rng.normal(size=4)
    f = lambda x, t: np.sin(A @ x) + t  # noqa: E731
    np.testing.assert_allclose(ti.ssprk3_step(f, u, 0.1, 0.5), ti.explicit_rk_step(ti.SSPRK3, f, u, 0.1, 0.5),
                               rtol=1e-14)


def test_observed_orders():
    o3, _ = ti.observed_order(ti.ssprk3_step, [0.2, 0.1, 0.05])
    o6, _ = ti.observed_order(ti.rk76_step, [0.2, 0.1, 0.05])
    assert o3[-1] == pytest.approx(3.0, abs=0.1)
    assert o6[-1] == pytest.approx(6.0, abs=0.2)


def test_nonfinite_state_is_reported():
    with pytest.raises(ti.IntegrationError):
        ti.ssprk3_step(lambda u, t: np.full_like(u, np.inf), np.array([1.0]), 0.1)


def test_bad_tableaus_rejected():
    with pytest.raises(ValueError):
        ti.ButcherTableau("implicit", np.eye(2), np.array([0.5, 0.5]), np.array([1.0, 1.0]), 1)
    with pytest.raises(ValueError):
        ti.ButcherTableau("bad-b", np.zeros((2, 2)), np.array([0.5, 0.6]), np.zeros(2), 1)
    with pytest.raises(ValueError):
        ti.integrator("rk4")


def test_p1_cfl_step():
    # m_i^e = h/2 and sum_j 2 d_ij^e = 1 on every element, so dt = h/2 at cfl = 1
    sp = make_space("adv1d_cos", 1, 8)
    u = np.random.default_rng(0).normal(size=8)
    assert ti.cfl_timestep(sp, u, 1.0) == pytest.approx(1 / 16, rel=1e-14)
    assert ti.cfl_timestep(sp, u, 1.0, remaining=0.01) == 0.01
    with pytest.raises(ValueError):
        ti.cfl_timestep(sp, u, 0.0)


@settings(max_examples=20, deadline=None)
@given(cfl=st.floats(0.01, 2.0), p=st.integers(1, 4))
def test_cfl_is_linear(cfl, p):
    sp = make_space("burgers1d", p, 3)
    u = np.linspace(-1, 1, sp.num_nodes)
    assert ti.cfl_timestep(sp, u, 2 * cfl) == pytest.approx(2 * ti.cfl_timestep(sp, u, cfl), rel=1e-14)


def test_zero_speed_takes_remaining_time():
    sp = make_space("burgers1d", 2, 3)
    assert ti.cfl_timestep(sp, np.zeros(sp.num_nodes), 0.5, remaining=0.3) == 0.3


def test_default_cfl():
    import inspect
    assert inspect.signature(run).parameters["cfl"].default == 0.25
