"""Semi-discrete operators for all scheme variants, time loop and diagnostics."""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import limiter as lim
from .mesh import build_mesh
from .physics import PRESET_ALIASES, BenchmarkProblem, benchmark
from .space import Space
from .stabilization import (
    StabilizationConfig,
    StabilizedTerms,
    galerkin_vectors,
    pointwise_residual,
    stabilized_terms,
)
from .time_integration import SSP_INTEGRATORS, IntegrationError, cfl_timestep, integrator

EV_BOUND_TOL = 1e-10
FL_ENTROPY_TOL = 1e-10
BLOWUP_FACTOR = 1e3


class SchemeError(ValueError):
    pass


class BlowUpError(RuntimeError):
    pass


@dataclass(frozen=True)
class SchemeVariant:
    """Parsed scheme label such as ``HO-VMS-EV-FL``.

    ``limiter`` is one of ``none``, ``BP``, ``FL`` or ``LO`` (low-order
    scheme with all subcell fluxes set to zero).
    """

    name: str
    stabilization: StabilizationConfig
    limiter: str = "none"

    @property
    def limited(self) -> bool:
        return self.limiter != "none"

    @property
    def entropy_viscosity(self) -> bool:
        return self.stabilization.entropy_viscosity


def parse_scheme(label: str, omega: float = 1.0, recovery: str = "lumped_average",
                 ev_cap: float | None = None) -> SchemeVariant:
    tokens = label.strip().upper().split("-")
    if tokens == ["CG"]:
        return SchemeVariant("CG", StabilizationConfig("none", omega, recovery))
    if tokens == ["LO"]:
        return SchemeVariant("LO", StabilizationConfig("none", omega, recovery), limiter="LO")
    if len(tokens) < 2 or tokens[0] != "HO" or tokens[1] not in ("SUPG", "VMS"):
        raise SchemeError(f"cannot parse scheme {label!r}")
    rest = tokens[2:]
    ev = False
    if rest and rest[0] == "EV":
        ev = True
        rest = rest[1:]
    limiter = "none"
    if rest and rest[0] in ("BP", "FL"):
        limiter = rest[0]
        rest = rest[1:]
    if rest:
        raise SchemeError(f"cannot parse scheme {label!r}")
    config = StabilizationConfig(tokens[1], omega, recovery, ev, ev_cap)
    return SchemeVariant("-".join(tokens), config, limiter)


@dataclass
class Monitor:
    """Running extrema of the per-evaluation checks."""

    evaluations: int = 0
    ev_bound_worst: float = -np.inf
    ev_bound_violations: int = 0
    fl_entropy_worst: float = -np.inf
    fl_entropy_violations: int = 0
    degenerate_elements: int = 0
    clipped: int = 0
    pairs: int = 0
    entropy_fixes: int = 0
    pbar_worst: float = 0.0
    production_min: float = np.inf
    production_max: float = -np.inf

    @property
    def clipped_fraction(self) -> float:
        return self.clipped / self.pairs if self.pairs else 0.0


class SemiDiscretization:
    """du/dt for one scheme variant on one space."""

    def __init__(self, space: Space, scheme: SchemeVariant, strict: bool = True):
        if scheme.limited and space.basis.kind != "bernstein":
            raise SchemeError("limited schemes require the Bernstein basis")
        self.space = space
        self.scheme = scheme
        self.strict = strict
        self.monitor = Monitor()
        self.last: dict = {}

    # {{{ unlimited target

    def terms(self, u, fields=None, need_udot=False) -> StabilizedTerms:
        return stabilized_terms(self.space, u, self.scheme.stabilization, fields, need_udot)

    def target_rhs(self, u, fields=None) -> np.ndarray:
        terms = self.terms(u, fields)
        self._record_ev(terms)
        self.last["terms"] = terms
        return self.space.solve_mass(self.space.scatter(terms.total))

    def _record_ev(self, terms: StabilizedTerms):
        mon = self.monitor
        if terms.production is None:
            return
        p = terms.production
        mon.production_min = min(mon.production_min, float(p.min()))
        mon.production_max = max(mon.production_max, float(p.max()))
        scale = max(float(np.abs(p).max()), np.finfo(float).tiny)
        # degenerate elements carry nu = 0 by construction and are counted apart
        defect = np.where(terms.degenerate, -np.inf, terms.ev_defect)
        ratio = float(defect.max(initial=-np.inf)) / scale
        mon.ev_bound_worst = max(mon.ev_bound_worst, ratio)
        if ratio > EV_BOUND_TOL:
            mon.ev_bound_violations += 1
        mon.degenerate_elements += int(np.count_nonzero(terms.degenerate))

    # }}}

    def __call__(self, u, t=0.0) -> np.ndarray:
        return self.rhs(u)

    def rhs(self, u) -> np.ndarray:
        self.monitor.evaluations += 1
        if not self.scheme.limited:
            return self.target_rhs(u)
        return self.flux_corrected_rhs(u, self.scheme.limiter)

    def flux_corrected_rhs(self, u, mode: str) -> np.ndarray:
        """Lumped-mass flux form.

        ``mode``: ``LO`` (no subcell fluxes), ``raw`` (unlimited subcell
        fluxes, reproduces the target scheme), ``BP`` or ``FL``.
        """
        sp = self.space
        fm = sp.flux_model
        fields = sp.evaluate(u)
        U, F = fields.U, fields.F
        d = lim.llf_diffusion(sp, U)
        if mode == "LO":
            return lim.flux_form_rhs(sp, U, F, d, np.zeros_like(d))

        terms = self.terms(u, fields)
        self._record_ev(terms)
        udot_s = sp.solve_mass(sp.scatter(terms.total))
        b = lim.potential_rhs(sp, fields, udot_s, terms.total)
        W = lim.solve_flux_potentials(sp, b)
        f_raw = lim.raw_subcell_fluxes(sp, W, U, d)
        self.last.update(terms=terms, udot_target=udot_s, f_raw=f_raw, d=d)
        if mode == "raw":
            return lim.flux_form_rhs(sp, U, F, d, f_raw)

        umin, umax = lim.local_bounds(sp, u)
        ei, ej = sp.edge_i, sp.edge_j
        umin_e, umax_e = umin[sp.conn], umax[sp.conn]
        ubar_ij, ubar_ji = lim.bar_states(sp, U, F, d)
        f_star = lim.idp_limit(f_raw, ubar_ij, ubar_ji, umin_e[:, ei], umax_e[:, ei],
                               umin_e[:, ej], umax_e[:, ej], d)
        mon = self.monitor
        mon.pairs += f_raw.size
        mon.clipped += int(np.count_nonzero(f_star != f_raw))
        f_bar, d_tot = f_star, d
        if mode == "FL":
            q_ij, q_ji, p_max = lim.entropy_rates(sp, fields, d)
            eps = lim.production_epsilon(q_ij, q_ji, p_max)
            p_ij, p_ji = lim.distribute_production(q_ij, q_ji, p_max, eps)
            V = fm.v(U)
            ui, uj, vi, vj = U[:, ei], U[:, ej], V[:, ei], V[:, ej]
            d_add = lim.additional_diffusion(q_ij, q_ji, p_ij, p_ji, ui, uj, vi, vj, eps[:, None])
            scale = np.maximum(1.0, np.maximum(np.abs(p_max), np.abs(q_ij).max(axis=1)))[:, None]
            f_bar, _, _, worst = lim.entropy_limit(f_star, p_ij, p_ji, q_ij, q_ji, d_add,
                                                   ui, uj, vi, vj,
                                                   scale=scale if self.strict else None)
            mon.entropy_fixes += int(np.count_nonzero(d_add))
            mon.pbar_worst = min(mon.pbar_worst, float((worst / scale).min()))
            d_tot = d + d_add
        du = lim.flux_form_rhs(sp, U, F, d_tot, f_bar)
        self.last.update(f_star=f_star, f_bar=f_bar, d_total=d_tot)
        if mode == "FL" and fm.square_entropy:
            rate = float(np.sum(sp.lumped_mass * fm.v(u) * du))
            scale = float(np.sum(sp.lumped_mass * np.abs(fm.v(u) * du))) or 1.0
            mon.fl_entropy_worst = max(mon.fl_entropy_worst, rate / scale)
            if rate > FL_ENTROPY_TOL * scale:
                mon.fl_entropy_violations += 1
        return du


# {{{ diagnostics


def total_mass(space: Space, u) -> float:
    return float(np.sum(space.lumped_mass * u))


def discrete_entropy(space: Space, u) -> float:
    return float(np.sum(space.lumped_mass * space.flux_model.eta(u)))


def entropy_budget(space: Space, u, udot):
    """Both sides of the semi-discrete entropy balance.

    left  = sum_e int dη(u_h)/dt + div q(u_h), realized as v(u_h)(u_dot + f'(u_h) grad u_h)
    right = sum_e int (v(u_h) - v_h)(u_dot + div f(u_h)) with v_j = v(u_j)
    Returns ``(left, right, left - right)``.
    """
    fm = space.flux_model
    fields = space.evaluate(u)
    res = pointwise_residual(space, fields, udot)
    vq = fm.v(fields.uq)
    vh = fm.v(fields.U) @ space.phi_q.T
    left = float(np.sum(vq * res * space.wdet))
    right = float(np.sum((vq - vh) * res * space.wdet))
    return left, right, left - right


def galerkin_time_derivative(space: Space, u) -> np.ndarray:
    return space.solve_mass(space.scatter(galerkin_vectors(space, space.evaluate(u))))


# }}}


@dataclass
class SimulationResult:
    problem: str
    scheme: str
    degree: int
    cells: tuple
    u: np.ndarray
    time: float
    steps: int
    status: str
    message: str
    diagnostics: list = field(default_factory=list)
    l1_error: float | None = None
    initial_range: tuple = (np.nan, np.nan)
    final_range: tuple = (np.nan, np.nan)
    monitor: Monitor | None = None
    space: Space | None = None
    wall_time: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def num_dofs(self) -> int:
        return self.u.size


def resolve_problem(problem) -> BenchmarkProblem:
    if isinstance(problem, BenchmarkProblem):
        return problem
    return benchmark(PRESET_ALIASES.get(problem, problem))


def cells_for_dofs(dimension: int, degree: int, dofs: int) -> int:
    """Cells per direction giving N_h = dofs periodic nodes."""
    per_dir = round(dofs ** (1.0 / dimension))
    if per_dir**dimension != dofs:
        raise ValueError(f"N_h = {dofs} is not a perfect power for d = {dimension}")
    if per_dir % degree:
        raise ValueError(f"degree {degree} does not divide {per_dir} nodes per direction")
    return per_dir // degree


def make_space(problem, degree: int, cells, basis: str = "bernstein", quad_points=None) -> Space:
    problem = resolve_problem(problem)
    mesh = build_mesh(problem.dimension, (problem.lower, problem.upper), cells, degree)
    return Space(mesh, problem.flux_model, basis, quad_points)


def initial_state(space: Space, problem: BenchmarkProblem, init: str | None = None) -> np.ndarray:
    mode = init or problem.init
    if mode == "l2":
        return space.project(problem.initial_condition)
    if mode == "nodal":
        return space.interpolate(problem.initial_condition)
    raise ValueError(f"unknown initialization {mode!r}")


def coefficient_range(u) -> tuple[float, float]:
    return float(np.min(u)), float(np.max(u))


def run(problem, scheme="HO-VMS-EV", degree: int = 1, cells=None, *, dofs=None,
        integrator_name: str = "ssprk3", cfl: float = 0.25, dt: float | None = None,
        final_time: float | None = None, omega: float = 1.0, recovery: str = "lumped_average",
        ev_cap: float | None = None, basis: str = "bernstein", init: str | None = None,
        record_every: int = 1, budget_every: int = 0, strict: bool = True,
        quad_points: int | None = None, callback=None) -> SimulationResult:
    """Integrate a benchmark to its final time.

    ``dt`` fixes the step (the last step is shortened to hit the final
    time); otherwise the CFL formula with ``cfl`` is used every step.
    Blow-up, non-finite states and limiter failures end the run with a
    non-``ok`` status instead of raising.
    """
    prob = resolve_problem(problem)
    variant = scheme if isinstance(scheme, SchemeVariant) else parse_scheme(scheme, omega, recovery, ev_cap)
    if cells is None:
        if dofs is None:
            raise ValueError("give cells or dofs")
        cells = cells_for_dofs(prob.dimension, degree, dofs)
    if variant.limited and integrator_name not in SSP_INTEGRATORS:
        warnings.warn(f"{integrator_name} is not SSP; bound preservation of {variant.name} is not guaranteed")
    step = integrator(integrator_name)
    space = make_space(prob, degree, cells, basis, quad_points)
    semi = SemiDiscretization(space, variant, strict=strict)
    u = initial_state(space, prob, init)
    t_end = prob.final_time if final_time is None else float(final_time)
    if t_end < 0:
        raise ValueError("final time must be >= 0")
    lo, hi = prob.bounds
    limit = BLOWUP_FACTOR * max(hi - lo, abs(lo), abs(hi), 1.0)

    diags = []

    def record(k, t, dt_k):
        row = {"step": k, "time": t, "dt": dt_k, "mass": total_mass(space, u),
               "entropy": discrete_entropy(space, u), "umin": float(u.min()), "umax": float(u.max())}
        if budget_every and k % budget_every == 0:
            udot = semi.rhs(u)
            row["entropy_rate"], _, row["budget_residual"] = entropy_budget(space, u, udot)
        diags.append(row)

    t, k = 0.0, 0
    status, message = "ok", ""
    start = time.perf_counter()
    init_range = coefficient_range(u)
    record(0, 0.0, 0.0)
    tiny = 1e-12 * max(1.0, t_end)
    try:
        while t < t_end - tiny:
            remaining = t_end - t
            if dt is not None:
                dt_k = min(dt, remaining)
            else:
                dt_k = cfl_timestep(space, u, cfl, remaining)
            u = step(semi, u, dt_k, t)
            t = t_end if dt_k == remaining else t + dt_k
            k += 1
            if np.max(np.abs(u)) > limit:
                raise BlowUpError(f"|u| exceeded {limit:.3g} at t = {t:.6g}")
            if record_every and (k % record_every == 0 or t >= t_end - tiny):
                record(k, t, dt_k)
            if callback is not None:
                callback(k, t, u)
    except (BlowUpError, IntegrationError) as exc:
        status, message = "blow-up", str(exc)
    except lim.LimiterError as exc:
        status, message = "limiter-failure", str(exc)

    l1 = None
    if status == "ok" and prob.exact is not None:
        try:
            l1 = space.l1_error(u, lambda x: prob.exact(x, t))
        except ValueError:
            l1 = None
    return SimulationResult(
        problem=prob.name, scheme=variant.name, degree=degree,
        cells=space.mesh.cells, u=u, time=t, steps=k, status=status, message=message,
        diagnostics=diags, l1_error=l1, initial_range=init_range,
        final_range=coefficient_range(u), monitor=semi.monitor, space=space,
        wall_time=time.perf_counter() - start,
    )


def eoc(errors) -> list:
    """log2 ratios of consecutive errors (mesh halving); None for the first row."""
    out = [None]
    for a, b in zip(errors[:-1], errors[1:]):
        out.append(math.log2(a / b) if a > 0 and b > 0 else (0.0 if a == b else math.nan))
    return out


def eoc_study(problem, scheme, degree: int, dofs_sequence, *, integrator_name: str = "rk76",
              cfl: float = 0.25, dt_policy=None, **kwargs) -> list[dict]:
    """Rows of (N_h, L1 error, EOC) for a sequence of resolutions.

    ``dt_policy(space_h)`` may return a fixed step per mesh; by default the
    CFL formula is used.
    """
    prob = resolve_problem(problem)
    if prob.exact is None:
        raise ValueError(f"{prob.name} has no exact solution")
    errors, rows = [], []
    for n in dofs_sequence:
        cells = cells_for_dofs(prob.dimension, degree, n)
        dt = None
        if dt_policy is not None:
            dt = dt_policy(prob, degree, cells)
        res = run(prob, scheme, degree, cells, integrator_name=integrator_name, cfl=cfl, dt=dt,
                  record_every=0, **kwargs)
        if not res.ok:
            raise BlowUpError(f"{scheme} p={degree} N_h={n}: {res.message}")
        errors.append(res.l1_error)
        rows.append({"dofs": n, "l1_error": res.l1_error, "steps": res.steps})
    for row, rate in zip(rows, eoc(errors)):
        row["eoc"] = rate
    return rows


def format_eoc_table(rows) -> str:
    lines = [f"{'N_h':>8}  {'L1 error':>12}  {'EOC':>6}"]
    for r in rows:
        rate = "" if r["eoc"] is None else f"{r['eoc']:.2f}"
        lines.append(f"{r['dofs']:>8}  {r['l1_error']:>12.3e}  {rate:>6}")
    return "\n".join(lines)
