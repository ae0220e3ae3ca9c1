"""Linear (SUPG, VMS) and entropy-viscosity stabilization.

All routines work on every element at once.  Element vectors have shape
``(E, n)`` and hold ``s(phi_i, u_h)`` for local basis function ``i``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .space import Fields, Space

SPEED_FLOOR = 1e-14
DEGENERATE_DENOMINATOR = 1e-14


@dataclass(frozen=True)
class StabilizationConfig:
    kind: str = "none"
    omega: float = 1.0
    recovery: str = "lumped_average"
    entropy_viscosity: bool = False
    ev_cap: float | None = None

    def __post_init__(self):
        if self.kind not in ("none", "SUPG", "VMS"):
            raise ValueError(f"unknown linear stabilization {self.kind!r}")
        if not self.omega >= 0.0:
            raise ValueError("omega must be >= 0")
        if self.recovery not in ("lumped_average", "l2_projection"):
            raise ValueError(f"unknown gradient recovery {self.recovery!r}")
        if self.ev_cap is not None and not self.ev_cap >= 0.0:
            raise ValueError("EV cap must be >= 0")


@dataclass
class TimeDerivative:
    values: np.ndarray
    variant: str
    residual: float


@dataclass
class StabilizedTerms:
    """Element vectors and coefficients of the stabilized target scheme."""

    galerkin: np.ndarray
    linear: np.ndarray
    entropy: np.ndarray
    udot_galerkin: np.ndarray | None
    nu_linear: np.ndarray
    nu_ev: np.ndarray
    nu_ev_min: np.ndarray
    production: np.ndarray | None
    #: p_h^e - s^EV(v_h, v_h) evaluated with nu_min
    ev_defect: np.ndarray | None
    degenerate: np.ndarray | None

    @property
    def total(self) -> np.ndarray:
        return self.galerkin - self.linear - self.entropy


# {{{ building blocks


def galerkin_vectors(space: Space, fields: Fields) -> np.ndarray:
    """int grad(phi_i) . f(u_h) on every element."""
    out = np.zeros(fields.U.shape)
    for k in range(space.dim):
        out += (fields.fq[..., k] * space.wdet) @ space.grad_q[k]
    return out


def speed_norm(space: Space, fields: Fields) -> np.ndarray:
    """max |f'(u_h)| over element nodes and quadrature points."""
    fm = space.flux_model
    un = fields.U @ space.phi_nodes.T
    dfn = fm.df(un, None if fm.autonomous else space.xn)
    at_nodes = np.sqrt(np.sum(dfn**2, axis=-1)).max(axis=1)
    at_quad = np.sqrt(np.sum(fields.dfq**2, axis=-1)).max(axis=1)
    return np.maximum(at_nodes, at_quad)


def supg_coefficient(space: Space, speed: np.ndarray, omega: float) -> np.ndarray:
    scale = space.flux_model.speed_scale or 1.0
    h, p = space.mesh.h, space.degree
    nu = np.zeros_like(speed)
    ok = speed >= SPEED_FLOOR * scale
    nu[ok] = omega * h / (2.0 * p * speed[ok])
    return nu


def vms_coefficient(space: Space, speed: np.ndarray, omega: float) -> np.ndarray:
    return omega * space.mesh.h * speed / (2.0 * space.degree)


def pointwise_residual(space: Space, fields: Fields, udot: np.ndarray) -> np.ndarray:
    """du_h/dt + div f(u_h) at quadrature points.

    The divergence is f'(u_h) . grad u_h, which assumes any explicit
    spatial dependence of the flux is solenoidal (true for rigid rotation).
    """
    res = space.gather(udot) @ space.phi_q.T
    res += np.sum(fields.dfq * fields.grad_uq, axis=-1)
    return res


def supg_vectors(space: Space, fields: Fields, udot: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """s^SUPG(phi_i, u_h) = nu int (f'(u_h) . grad phi_i)(u_dot + div f)."""
    wres = pointwise_residual(space, fields, udot) * space.wdet
    out = np.zeros(fields.U.shape)
    for k in range(space.dim):
        out += (wres * fields.dfq[..., k]) @ space.grad_q[k]
    return nu[:, None] * out


@dataclass
class RecoveredGradient:
    #: nodal data: Lagrange point values (lumped_average) or coefficients (l2_projection)
    nodal: np.ndarray
    #: g_h at quadrature points, (E, nq, d)
    at_quadrature: np.ndarray
    method: str


def recover_gradient(space: Space, u: np.ndarray, method: str = "lumped_average") -> RecoveredGradient:
    U = space.gather(u)
    d = space.dim
    if method == "lumped_average":
        weights = space.ops.lumped
        m = space.lumped_mass
        nodal = np.empty((space.num_nodes, d))
        for k in range(d):
            gk = U @ space.grad_nodes[k].T  # gradient at the lattice nodes
            nodal[:, k] = space.scatter(gk * weights) / m
        gq = np.stack([nodal[space.conn, k] @ space.lagrange_q.T for k in range(d)], axis=-1)
    elif method == "l2_projection":
        nodal = np.empty((space.num_nodes, d))
        for k in range(d):
            b = ((U @ space.grad_q[k].T) * space.wdet) @ space.phi_q
            nodal[:, k] = space.solve_mass(space.scatter(b))
        gq = np.stack([nodal[space.conn, k] @ space.phi_q.T for k in range(d)], axis=-1)
    else:
        raise ValueError(f"unknown gradient recovery {method!r}")
    return RecoveredGradient(nodal=nodal, at_quadrature=gq, method=method)


def vms_vectors(space: Space, fields: Fields, gq: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """s^VMS(phi_i, u_h) = nu int grad phi_i . (grad u_h - g_h)."""
    diff = (fields.grad_uq - gq) * space.wdet[None, :, None]
    out = np.zeros(fields.U.shape)
    for k in range(space.dim):
        out += diff[..., k] @ space.grad_q[k]
    return nu[:, None] * out


def entropy_production(space: Space, fields: Fields, V: np.ndarray,
                       udot: np.ndarray | None, ls_v: np.ndarray) -> np.ndarray:
    """p_h^e = int (v(u_h) - v_h)(u_dot + div f) - s^LS(v_h, u_h).

    ``V`` holds the coefficients v_j = v(u_j) of v_h.  With the square
    entropy v(u_h) = u_h = v_h, so the first term is dropped and ``udot``
    may be None.
    """
    fm = space.flux_model
    if fm.square_entropy:
        return -ls_v
    if udot is None:
        raise ValueError("a time derivative is required for non-square entropies")
    gap = fm.v(fields.uq) - V @ space.phi_q.T
    res = pointwise_residual(space, fields, udot)
    return np.sum(gap * res * space.wdet, axis=1) - ls_v


def ev_denominator(space: Space, V: np.ndarray) -> np.ndarray:
    """int (i_h1 v_h - i_h0 v_h)^2 per element."""
    Vc = V - V.mean(axis=1, keepdims=True)
    return np.einsum("ei,ij,ej->e", Vc, space.ev_matrix, Vc)


def ev_smoothness(space: Space, fields: Fields, V: np.ndarray) -> np.ndarray:
    """|int grad v_h . (f(pi u_h) - f(u_h))| per element."""
    fm = space.flux_model
    pu = fields.U @ space.proj_q.T
    fpi = fm.f(pu, None if fm.autonomous else space.xq)
    total = np.zeros(V.shape[0])
    for k in range(space.dim):
        gv = V @ space.grad_q[k].T
        total += np.sum(gv * (fpi[..., k] - fields.fq[..., k]) * space.wdet, axis=1)
    return np.abs(total)


def ev_coefficient(space: Space, fields: Fields, V: np.ndarray, production: np.ndarray,
                   cap: float | None = None, v_scale: float | None = None):
    """Entropy viscosity per element.

    Returns ``(nu, nu_min, denominator, degenerate)``.  Elements whose
    fluctuation integral is negligible get nu = 0 and are flagged.
    """
    den = ev_denominator(space, V)
    if v_scale is None:
        v_scale = float(np.max(np.abs(V), initial=0.0))
    degenerate = den <= DEGENERATE_DENOMINATOR * space.volume * v_scale**2
    safe = np.where(degenerate, 1.0, den)
    nu_min = np.where(degenerate, 0.0, np.maximum(0.0, production) / safe)
    nu = np.where(degenerate, 0.0, nu_min + ev_smoothness(space, fields, V) / safe)
    if cap is not None:
        nu = np.minimum(nu, cap)
        nu_min = np.minimum(nu_min, nu)
    return nu, nu_min, den, degenerate


def ev_vectors(space: Space, V: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """s^EV(phi_i, v_h) = nu int (i1 phi_i - i0 phi_i)(i1 v_h - i0 v_h)."""
    # the fluctuation operator annihilates constants; removing the element
    # mean first keeps the vector sum at round-off even for very large nu
    Vc = V - V.mean(axis=1, keepdims=True)
    return nu[:, None] * (Vc @ space.ev_matrix)


# }}}


def stabilized_terms(space: Space, u: np.ndarray, config: StabilizationConfig,
                     fields: Fields | None = None, need_udot: bool = False) -> StabilizedTerms:
    """Element vectors of the stabilized target right-hand side."""
    if fields is None:
        fields = space.evaluate(u)
    fm = space.flux_model
    E = space.num_elements
    gal = galerkin_vectors(space, fields)

    want_udot = (need_udot or config.kind == "SUPG"
                 or (config.entropy_viscosity and not fm.square_entropy))
    udot = space.solve_mass(space.scatter(gal)) if want_udot else None

    zeros_e = np.zeros(E)
    lin = np.zeros_like(gal)
    nu_lin = zeros_e
    if config.kind != "none" and config.omega > 0.0:
        speed = speed_norm(space, fields)
        if config.kind == "SUPG":
            nu_lin = supg_coefficient(space, speed, config.omega)
            lin = supg_vectors(space, fields, udot, nu_lin)
        else:
            nu_lin = vms_coefficient(space, speed, config.omega)
            g = recover_gradient(space, u, config.recovery)
            lin = vms_vectors(space, fields, g.at_quadrature, nu_lin)

    ev = np.zeros_like(gal)
    nu_ev = nu_min = zeros_e
    production = defect = degenerate = None
    if config.entropy_viscosity:
        V = fm.v(fields.U)
        ls_v = np.sum(V * lin, axis=1)
        production = entropy_production(space, fields, V, udot, ls_v)
        nu_ev, nu_min, den, degenerate = ev_coefficient(space, fields, V, production, config.ev_cap)
        defect = production - nu_min * den
        ev = ev_vectors(space, V, nu_ev)

    return StabilizedTerms(
        galerkin=gal, linear=lin, entropy=ev, udot_galerkin=udot,
        nu_linear=nu_lin, nu_ev=nu_ev, nu_ev_min=nu_min, production=production,
        ev_defect=defect, degenerate=degenerate,
    )


def compute_time_derivative(space: Space, u: np.ndarray, variant: str = "galerkin",
                            config: StabilizationConfig | None = None) -> TimeDerivative:
    """Consistent-mass time derivative of the Galerkin or stabilized scheme."""
    if variant == "galerkin":
        fields = space.evaluate(u)
        rhs = space.scatter(galerkin_vectors(space, fields))
    elif variant == "stabilized":
        terms = stabilized_terms(space, u, config or StabilizationConfig())
        rhs = space.scatter(terms.total)
    else:
        raise ValueError(f"unknown time derivative variant {variant!r}")
    values = space.solve_mass(rhs)
    return TimeDerivative(values=values, variant=variant, residual=space.mass_solver.last_residual)
