"""Property suites behind ``entropy-cg verify``.

Each suite returns a :class:`SuiteResult` with the number of checks, the
number of failures and the worst normalized defect against its tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import limiter as lim
from .basis import ReferenceBasis, assemble_element_operators, global_skew_check
from .mesh import build_mesh
from .physics import buckley_leverett, burgers, kpp, linear_advection, rotating_advection
from .solver import (
    SemiDiscretization,
    entropy_budget,
    discrete_entropy,
    make_space,
    parse_scheme,
)
from .time_integration import RK76, SSPRK3, explicit_rk_step, observed_order, ssprk3_step


@dataclass
class SuiteResult:
    name: str
    checks: int
    failures: int
    worst: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return (f"[{tag}] {self.name}: {self.checks} checks, {self.failures} failures, "
                f"worst {self.worst:.3e} (tol {self.tol:.1e})")


def _result(name, defects, tol):
    defects = np.asarray(defects, dtype=float).ravel()
    return SuiteResult(name, defects.size, int(np.count_nonzero(~(defects <= tol))),
                       float(np.max(defects, initial=0.0)), tol)


def operators_suite(degrees=(1, 2, 3, 4), tol=1e-12, **_):
    """Zero row sums of c~ and m~, global skew symmetry of c, positive lumped masses."""
    defects = []
    for d in (1, 2):
        for p in degrees:
            mesh = build_mesh(d, (0.0, 1.0), 3, p)
            ops = assemble_element_operators(mesh, 0, ReferenceBasis("bernstein", p, d))
            cscale = np.abs(ops.c).max()
            defects.append(np.abs(ops.c_tilde.sum(axis=2)).max() / cscale)
            defects.append(np.abs(ops.subcell_mass.sum(axis=1)).max() / np.abs(ops.subcell_mass).max())
            defects.append(global_skew_check(mesh, ops) / cscale)
            defects.append(0.0 if np.all(ops.lumped > 0) else np.inf)
            defects.append(abs(ops.mass.sum() - ops.volume) / ops.volume)
    return _result("operators", defects, tol)


FUZZ_MODELS = {
    "linear_advection": (lambda: linear_advection((1.0, -0.5)), (-1.0, 1.0)),
    "rotating_advection": (rotating_advection, (0.0, 1.0)),
    "burgers": (lambda: burgers(2), (-1.0, 1.0)),
    "buckley_leverett": (buckley_leverett, (0.0, 1.0)),
    "kpp": (kpp, (0.25 * np.pi, 3.5 * np.pi)),
}


def _random_pairs(model, bounds, n, rng):
    ui = rng.uniform(*bounds, n)
    uj = rng.uniform(*bounds, n)
    # occasional equal states and exact bound values
    uj[: n // 20] = ui[: n // 20]
    c_ij = rng.normal(size=(n, 2)) * rng.uniform(0.05, 2.0, (n, 1))
    c_ji = -c_ij + 0.3 * rng.normal(size=(n, 2))
    if model.autonomous:
        xi = xj = None
    else:
        xi = rng.uniform(0.0, 1.0, (n, 2))
        xj = xi + 0.05 * rng.normal(size=(n, 2))
    nij = np.linalg.norm(c_ij, axis=1)
    nji = np.linalg.norm(c_ji, axis=1)
    lam_ij = model.lam(ui, uj, c_ij / nij[:, None], xi, xj)
    lam_ji = model.lam(uj, ui, c_ji / nji[:, None], xj, xi)
    d = np.maximum(nij * lam_ij, nji * lam_ji)
    return ui, uj, c_ij, c_ji, xi, xj, d


def pair_entropy_rate(model, ui, uj, c_ij, d, xi=None, xj=None):
    """q~_ij of a single pair set (vectorized over pairs)."""
    vi, vj = model.v(ui), model.v(uj)
    Fi, Fj = model.f(ui, xi), model.f(uj, xj)
    Pi, Pj = model.psi(ui, xi), model.psi(uj, xj)
    q = 0.5 * (vi - vj) * (d * (uj - ui) - np.sum(c_ij * (Fi + Fj), axis=1))
    q -= np.sum(c_ij * (Pj - Pi), axis=1)
    scale = np.maximum(1.0, np.abs(0.5 * (vi - vj) * d * (uj - ui))
                       + np.abs(0.5 * (vi - vj) * np.sum(c_ij * (Fi + Fj), axis=1))
                       + np.abs(np.sum(c_ij * (Pj - Pi), axis=1)))
    return q, scale


def llf_entropy_suite(seed=0, samples=10_000, tol=1e-12, **_):
    rng = np.random.default_rng(seed)
    defects = []
    for make, bounds in FUZZ_MODELS.values():
        model = make()
        ui, uj, c_ij, c_ji, xi, xj, d = _random_pairs(model, bounds, samples, rng)
        # the pairwise inequality is a property of autonomous fluxes; a
        # space-dependent flux is tested with its coefficient frozen per pair
        q, scale = pair_entropy_rate(model, ui, uj, c_ij, d, xi, xi)
        defects.append(np.maximum(q, 0.0) / scale)
    return _result("llf-entropy", np.concatenate(defects), tol)


def pair_bar_states(model, ui, uj, c_ij, c_ji, d, xi=None, xj=None):
    dF = model.f(uj, xj) - model.f(ui, xi)
    mean = 0.5 * (ui + uj)
    return mean - np.sum(c_ij * dF, axis=1) / (2 * d), mean + np.sum(c_ji * dF, axis=1) / (2 * d)


def idp_suite(seed=0, samples=10_000, tol=1e-12, **_):
    """Limited bar states stay inside the local bounds for every alpha in [0, 1]."""
    rng = np.random.default_rng(seed)
    defects = []
    for make, bounds in FUZZ_MODELS.values():
        model = make()
        ui, uj, c_ij, c_ji, xi, xj, d = _random_pairs(model, bounds, samples, rng)
        width = bounds[1] - bounds[0]
        lo_pair, hi_pair = np.minimum(ui, uj), np.maximum(ui, uj)
        umin_i = lo_pair - rng.uniform(0, 0.2, samples) * width
        umax_i = hi_pair + rng.uniform(0, 0.2, samples) * width
        umin_j = lo_pair - rng.uniform(0, 0.2, samples) * width
        umax_j = hi_pair + rng.uniform(0, 0.2, samples) * width
        bij, bji = pair_bar_states(model, ui, uj, c_ij, c_ji, d, xi, xj)
        f = rng.normal(size=samples) * d * width
        fs = lim.idp_limit(f, bij, bji, umin_i, umax_i, umin_j, umax_j, d)
        star_ij = bij + fs / (2 * d)
        star_ji = bji - fs / (2 * d)
        scale = max(1.0, width)
        for lo, hi, val in ((umin_i, umax_i, star_ij), (umin_j, umax_j, star_ji),
                            (umin_i, umax_i, bij), (umin_j, umax_j, bji)):
            defects.append(np.maximum(np.maximum(lo - val, val - hi), 0.0) / scale)
        defects.append(np.maximum(np.abs(fs) - np.abs(f), 0.0))
        defects.append(np.where(fs * f < 0, np.abs(fs), 0.0))
    return _result("idp", np.concatenate(defects), tol)


DECOMPOSITION_CASES = (
    ("adv1d_cos", (0.0, 1.0)),
    ("burgers1d", (-1.0, 1.0)),
    ("solid_body_rotation", (0.0, 1.0)),
    ("kpp", (0.25 * np.pi, 3.5 * np.pi)),
    ("buckley_leverett", (0.0, 1.0)),
)


def decomposition_suite(seed=0, samples=200, degrees=(1, 2, 3, 4), tol=1e-11,
                        schemes=("HO-SUPG", "HO-VMS", "HO-SUPG-EV", "HO-VMS-EV"), **_):
    """Flux form with unlimited subcell fluxes equals the consistent-mass target."""
    rng = np.random.default_rng(seed)
    defects = []
    for prob, bounds in DECOMPOSITION_CASES:
        for p in degrees:
            sp = make_space(prob, p, 4 if sp_dim(prob) == 1 else 2)
            for name in schemes:
                semi = SemiDiscretization(sp, parse_scheme(name))
                for _ in range(samples):
                    u = rng.uniform(*bounds, sp.num_nodes)
                    flux_form = semi.flux_corrected_rhs(u, "raw")
                    target = semi.last["udot_target"]
                    defects.append(np.abs(flux_form - target).max() / max(np.abs(target).max(), 1e-300))
    return _result("decomposition", defects, tol)


def sp_dim(prob):
    return 1 if prob in ("adv1d_cos", "adv1d_threebody", "burgers1d") else 2


def cg_entropy_suite(seed=0, samples=20, tol=1e-9, **_):
    """Pure CG with the square entropy: no entropy production at every RK stage."""
    rng = np.random.default_rng(seed)
    defects = []
    for prob, lo, hi in (("adv1d_cos", -1.0, 1.0), ("burgers1d", -1.0, 1.0)):
        for p in (1, 2, 3, 4):
            sp = make_space(prob, p, max(2, 32 // p))
            semi = SemiDiscretization(sp, parse_scheme("CG"))

            def monitored(u, t=0.0):
                du = semi.rhs(u)
                left, _, _ = entropy_budget(sp, u, du)
                defects.append(abs(left) / max(1.0, abs(discrete_entropy(sp, u))))
                return du

            for _ in range(max(1, samples // 4)):
                u = rng.uniform(lo, hi, sp.num_nodes)
                explicit_rk_step(RK76, monitored, u, 1e-3)
    return _result("cg-entropy", defects, tol)


def ev_bound_suite(seed=0, samples=20, tol=1e-10, **_):
    rng = np.random.default_rng(seed)
    defects = []
    for prob, lo, hi in DECOMPOSITION_CASES:
        for p in (1, 2, 4):
            sp = make_space(prob, p, 4 if sp_dim(prob) == 1 else 2)
            for name in ("HO-SUPG-EV", "HO-VMS-EV"):
                semi = SemiDiscretization(sp, parse_scheme(name))
                for _ in range(samples):
                    semi.rhs(rng.uniform(lo, hi, sp.num_nodes))
                    t = semi.last["terms"]
                    scale = max(np.abs(t.production).max(), 1e-300)
                    defect = np.where(t.degenerate, 0.0, t.ev_defect)
                    defects.append(np.maximum(defect, 0.0) / scale)
    return _result("ev-bound", np.concatenate(defects), tol)


def fl_entropy_suite(seed=0, samples=20, tol=1e-10, **_):
    """After entropy limiting, sum_i m_i v_i du_i/dt <= 0."""
    rng = np.random.default_rng(seed)
    defects = []
    for prob, lo, hi in DECOMPOSITION_CASES:
        for p in (1, 2, 4):
            sp = make_space(prob, p, 4 if sp_dim(prob) == 1 else 2)
            semi = SemiDiscretization(sp, parse_scheme("HO-VMS-EV-FL"))
            for _ in range(samples):
                u = rng.uniform(lo, hi, sp.num_nodes)
                du = semi.rhs(u)
                v = sp.flux_model.v(u)
                rate = np.sum(sp.lumped_mass * v * du)
                scale = max(np.sum(sp.lumped_mass * np.abs(v * du)), 1e-300)
                defects.append(max(rate, 0.0) / scale)
    return _result("fl-entropy", defects, tol)


def rk_order_suite(**_):
    o3, _ = observed_order(ssprk3_step, [0.2, 0.1, 0.05])
    o6, _ = observed_order(lambda f, u, dt, t: explicit_rk_step(RK76, f, u, dt, t), [0.2, 0.1, 0.05])
    defects = [abs(o3[-1] - SSPRK3.order) / 0.1, abs(o6[-1] - RK76.order) / 0.2]
    return _result("rk-order", defects, 1.0)


SUITES = {
    "operators": operators_suite,
    "llf-entropy": llf_entropy_suite,
    "idp": idp_suite,
    "decomposition": decomposition_suite,
    "cg-entropy": cg_entropy_suite,
    "ev-bound": ev_bound_suite,
    "fl-entropy": fl_entropy_suite,
    "rk-order": rk_order_suite,
}


def run_suites(names, seed=0, samples=None):
    if names == ["all"] or names == "all":
        names = list(SUITES)
    results = []
    for name in names:
        if name not in SUITES:
            raise KeyError(f"unknown suite {name!r}; choose from {', '.join(SUITES)} or all")
        kwargs = {"seed": seed}
        if samples is not None:
            kwargs["samples"] = samples
        results.append(SUITES[name](**kwargs))
    return results
