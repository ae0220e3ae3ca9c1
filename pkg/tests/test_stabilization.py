import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from entropy_cg import stabilization as stab
from entropy_cg.mesh import build_mesh
from entropy_cg.physics import burgers, linear_advection
from entropy_cg.solver import galerkin_time_derivative, make_space
from entropy_cg.space import Space


def space_1d(p, cells, model=None, box=(0.0, 1.0)):
    return Space(build_mesh(1, box, cells, p), model or linear_advection(1.0))


# time derivative

@pytest.mark.parametrize("problem", ["adv1d_cos", "burgers1d", "solid_body_rotation", "kpp"])
def test_constant_state_is_steady(problem):
    sp = make_space(problem, 2, 3)
    u = np.full(sp.num_nodes, 0.9)
    assert np.abs(galerkin_time_derivative(sp, u)).max() <= 1e-12
    for kind in ("SUPG", "VMS"):
        terms = stab.stabilized_terms(sp, u, stab.StabilizationConfig(kind, 1.0, entropy_viscosity=True))
        assert np.abs(sp.solve_mass(sp.scatter(terms.total))).max() <= 1e-12


def test_p1_advection_derivative_converges_at_second_order():
    errs = []
    for cells in (16, 32, 64):
        sp = space_1d(1, cells)
        x = sp.mesh.coords[:, 0]
        udot = galerkin_time_derivative(sp, np.sin(2 * np.pi * x))
        errs.append(np.sqrt(np.mean((udot + 2 * np.pi * np.cos(2 * np.pi * x)) ** 2)))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.9)


def test_stabilization_off_equals_galerkin():
    sp = make_space("burgers1d", 3, 5)
    u = np.random.default_rng(0).uniform(-1, 1, sp.num_nodes)
    td = stab.compute_time_derivative(sp, u, "stabilized", stab.StabilizationConfig("none"))
    np.testing.assert_array_equal(td.values, galerkin_time_derivative(sp, u))


@pytest.mark.parametrize("bad", [dict(kind="GLS"), dict(omega=-1.0), dict(recovery="zz"), dict(ev_cap=-2.0)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        stab.StabilizationConfig(**bad)


# linear stabilization

def test_supg_and_vms_coefficients():
    sp = space_1d(2, 10)
    assert sp.mesh.h == pytest.approx(0.1)
    speed = np.ones(sp.num_elements)
    np.testing.assert_allclose(stab.supg_coefficient(sp, speed, 1.0), 0.025)
    np.testing.assert_allclose(stab.vms_coefficient(sp, speed, 1.0), 0.025)
    np.testing.assert_allclose(stab.vms_coefficient(sp, np.zeros(10), 1.0), 0.0)
    # vanishing speed switches SUPG off instead of dividing by zero
    np.testing.assert_allclose(stab.supg_coefficient(sp, np.zeros(10), 1.0), 0.0)


@pytest.mark.parametrize("kind", ["SUPG", "VMS"])
def test_omega_zero_switches_terms_off(kind):
    sp = make_space("burgers1d", 2, 6)
    u = np.random.default_rng(1).uniform(-1, 1, sp.num_nodes)
    terms = stab.stabilized_terms(sp, u, stab.StabilizationConfig(kind, 0.0))
    assert np.all(terms.linear == 0.0)


def test_supg_vanishes_for_zero_residual():
    sp = space_1d(2, 6)
    u = np.full(sp.num_nodes, 0.3)
    fields = sp.evaluate(u)
    nu = np.ones(sp.num_elements)
    assert np.abs(stab.supg_vectors(sp, fields, np.zeros(sp.num_nodes), nu)).max() <= 1e-14


def test_lumped_average_of_hat_slopes():
    sp = space_1d(1, 8)
    u = np.zeros(8)
    u[3] = 1.0  # slopes +8 on the left and -8 on the right of node 3
    u[4] = 0.5
    g = stab.recover_gradient(sp, u, "lumped_average").nodal[:, 0]
    assert g[3] == pytest.approx(0.5 * (8.0 + (-4.0)))
    assert g[4] == pytest.approx(0.5 * (-4.0 + (-4.0)))


@pytest.mark.parametrize("method", ["lumped_average", "l2_projection"])
def test_constant_state_has_zero_recovered_gradient(method):
    sp = make_space("solid_body_rotation", 2, 3)
    g = stab.recover_gradient(sp, np.full(sp.num_nodes, 2.0), method)
    assert np.abs(g.at_quadrature).max() <= 1e-12


def test_lumped_average_reproduces_linear_data_away_from_seam():
    # u = x is linear except across the periodic seam at x = 0
    sp = space_1d(2, 8)
    x = sp.mesh.coords[:, 0]
    g = stab.recover_gradient(sp, x.copy(), "lumped_average").nodal[:, 0]
    inner = (x > 0.2) & (x < 0.8)
    np.testing.assert_allclose(g[inner], 1.0, atol=1e-12)


@pytest.mark.parametrize("method", ["lumped_average", "l2_projection"])
def test_vms_term_vanishes_on_linear_data_away_from_seam(method):
    sp = space_1d(1, 8)
    x = sp.mesh.coords[:, 0]
    fields = sp.evaluate(x.copy())
    g = stab.recover_gradient(sp, x.copy(), method)
    out = stab.vms_vectors(sp, fields, g.at_quadrature, np.ones(sp.num_elements))
    if method == "lumped_average":
        np.testing.assert_allclose(out[2:6], 0.0, atol=1e-12)
    else:
        # the global projection spreads the seam jump, but only weakly
        assert np.abs(out[3:5]).max() < np.abs(out[[0, -1]]).max()


@pytest.mark.parametrize("method", ["lumped_average", "l2_projection"])
def test_recovered_gradient_converges(method):
    errs = []
    for cells in (8, 16, 32, 64):
        sp = space_1d(2, cells)
        u = sp.project(lambda x: np.sin(2 * np.pi * x[..., 0]))
        g = stab.recover_gradient(sp, u, method).at_quadrature[..., 0]
        exact = 2 * np.pi * np.cos(2 * np.pi * sp.xq[..., 0])
        errs.append(np.sum(np.abs(g - exact) * sp.wdet))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.5) and rates[-1] > 1.9


# entropy production and entropy viscosity

def test_square_entropy_without_stabilization_produces_nothing():
    sp = make_space("burgers1d", 2, 6)
    u = np.random.default_rng(2).uniform(-1, 1, sp.num_nodes)
    fields = sp.evaluate(u)
    p = stab.entropy_production(sp, fields, u[sp.conn], None, np.zeros(sp.num_elements))
    assert np.all(p == 0.0)


def test_production_is_minus_linear_term():
    sp = make_space("burgers1d", 2, 6)
    u = np.random.default_rng(3).uniform(-1, 1, sp.num_nodes)
    t = stab.stabilized_terms(sp, u, stab.StabilizationConfig("VMS", entropy_viscosity=True))
    ls_v = np.sum(u[sp.conn] * t.linear, axis=1)
    np.testing.assert_allclose(t.production, -ls_v, rtol=1e-14)


def test_minimal_viscosity_quotient():
    # one P1 cell of unit length: int (i1 - i0)^2 = (b - a)^2 / 12
    sp = space_1d(1, 2, box=(0.0, 2.0))
    jump = np.sqrt(48.0)
    u = np.array([0.0, jump])
    V = u[sp.conn]
    fields = sp.evaluate(u)
    den = stab.ev_denominator(sp, V)
    np.testing.assert_allclose(den, 4.0, rtol=1e-14)
    nu, nu_min, _, degenerate = stab.ev_coefficient(sp, fields, V, np.array([2.0, 2.0]))
    np.testing.assert_allclose(nu_min, 0.5, rtol=1e-14)
    # the smoothness term vanishes for linear fluxes on P1
    np.testing.assert_allclose(nu, 0.5, rtol=1e-12)
    assert not degenerate.any()


def test_constant_entropy_variable_is_degenerate():
    sp = space_1d(2, 4, burgers(1))
    u = np.full(sp.num_nodes, 0.7)
    nu, nu_min, den, degenerate = stab.ev_coefficient(sp, sp.evaluate(u), u[sp.conn],
                                                      np.ones(sp.num_elements))
    assert degenerate.all()
    assert np.all(nu == 0.0) and np.all(nu_min == 0.0)
    assert np.abs(stab.ev_vectors(sp, u[sp.conn], np.full(4, 3.0))).max() <= 1e-15


def test_low_degree_data_with_dissipation_gets_no_viscosity():
    # u_h of degree p-1 = 1 on a P2 mesh: f(pi u) = f(u) and production <= 0
    sp = space_1d(2, 4, burgers(1))
    x = sp.mesh.coords[:, 0]
    u = np.where(x < 0.5, 4 * x - 1, 3 - 4 * x)  # piecewise linear, kinks at cell faces
    V = u[sp.conn]
    nu, _, _, _ = stab.ev_coefficient(sp, sp.evaluate(u), V, -np.ones(sp.num_elements))
    np.testing.assert_allclose(nu, 0.0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), p=st.integers(1, 4), kind=st.sampled_from(["SUPG", "VMS"]))
def test_minimal_viscosity_balances_production(seed, p, kind):
    sp = make_space("burgers1d", p, max(2, 12 // p))
    u = np.random.default_rng(seed).uniform(-1, 1, sp.num_nodes)
    t = stab.stabilized_terms(sp, u, stab.StabilizationConfig(kind, entropy_viscosity=True))
    V = u[sp.conn]
    # s^EV(v_h, v_h) evaluated with nu_min equals max(0, p_h)
    s_min = np.sum(V * stab.ev_vectors(sp, V, t.nu_ev_min), axis=1)
    scale = np.abs(t.production).max()
    np.testing.assert_allclose(s_min, np.maximum(t.production, 0.0), atol=1e-11 * scale)
    assert np.all(t.nu_ev >= t.nu_ev_min)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), shift=st.floats(-5, 5))
def test_ev_term_sums_to_zero_and_ignores_constants(seed, shift):
    sp = make_space("solid_body_rotation", 2, 3)
    V = np.random.default_rng(seed).normal(size=(sp.num_elements, sp.n_local))
    nu = np.full(sp.num_elements, 1e6)
    a = stab.ev_vectors(sp, V, nu)
    b = stab.ev_vectors(sp, V + shift, nu)
    np.testing.assert_allclose(a, b, atol=1e-8 * np.abs(a).max())
    assert np.abs(a.sum(axis=1)).max() <= 1e-12 * np.abs(a).max()
