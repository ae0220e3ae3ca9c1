"""Subcell flux decomposition with bound-preserving and entropy limiting.

Pair quantities are stored per element on the undirected compact-stencil
edges ``space.edges`` (i < j), with shape ``(E, nedges)``.  The value for
the reversed pair follows from antisymmetry (fluxes) or symmetry
(diffusion); directed quantities such as bar states and entropy rates are
returned for both orientations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import AssemblyError
from .space import Fields, Space

COMPAT_TOL = 1e-10
PBAR_TOL = 1e-9


class LimiterError(RuntimeError):
    pass


def _edge_geometry(space: Space):
    """Unit directions n_ij, n_ji and norms |c~_ij|, |c~_ji| per edge."""
    nij = np.linalg.norm(space.ct_ij, axis=1)
    nji = np.linalg.norm(space.ct_ji, axis=1)
    dir_ij = np.divide(space.ct_ij, nij[:, None], out=np.zeros_like(space.ct_ij), where=nij[:, None] > 0)
    dir_ji = np.divide(space.ct_ji, nji[:, None], out=np.zeros_like(space.ct_ji), where=nji[:, None] > 0)
    return nij, nji, dir_ij, dir_ji


def llf_diffusion(space: Space, U: np.ndarray) -> np.ndarray:
    """LLF coefficients d~_ij = max(|c~_ij| lam_ij, |c~_ji| lam_ji) on every edge."""
    fm = space.flux_model
    ei, ej = space.edge_i, space.edge_j
    ui, uj = U[:, ei], U[:, ej]
    if fm.autonomous:
        xi = xj = None
    else:
        xi, xj = space.xn[:, ei], space.xn[:, ej]
    nij, nji, dir_ij, dir_ji = _edge_geometry(space)
    lam_ij = fm.lam(ui, uj, dir_ij, xi, xj)
    lam_ji = fm.lam(uj, ui, dir_ji, xj, xi)
    return np.maximum(nij * lam_ij, nji * lam_ji)


def diffusion_matrix(space: Space, d_edges: np.ndarray) -> np.ndarray:
    """Dense (E, n, n) matrices with d~ off the diagonal and zero row sums."""
    E, n = d_edges.shape[0], space.n_local
    D = np.zeros((E, n, n))
    D[:, space.edge_i, space.edge_j] = d_edges
    D[:, space.edge_j, space.edge_i] = d_edges
    D[:, np.arange(n), np.arange(n)] = -D.sum(axis=2)
    return D


@dataclass
class _Incidence:
    to_i: np.ndarray  # (nedges, n) one-hot of the edge's first node
    to_j: np.ndarray


def _incidence(space: Space) -> _Incidence:
    cached = getattr(space, "_limiter_incidence", None)
    if cached is None:
        m, n = space.edges.shape[0], space.n_local
        to_i = np.zeros((m, n))
        to_j = np.zeros((m, n))
        to_i[np.arange(m), space.edge_i] = 1.0
        to_j[np.arange(m), space.edge_j] = 1.0
        cached = _Incidence(to_i, to_j)
        space._limiter_incidence = cached
    return cached


def potential_rhs(space: Space, fields: Fields, udot_s: np.ndarray, stabilized: np.ndarray) -> np.ndarray:
    """Right-hand side b^e of the subcell potential system.

    ``stabilized`` holds int grad phi_i . f(u_h) - s^LS_i - s^EV_i per element.
    """
    ops = space.ops
    Ud = space.gather(udot_s)
    b = ops.lumped * Ud - Ud @ ops.mass.T
    scale = np.abs(b).max(axis=1)
    for k in range(space.dim):
        Fk = fields.F[..., k]
        t1 = Fk @ space.c_minus[k].T
        t2 = Fk @ ops.c[k]
        b += t1 - t2
        scale = np.maximum(scale, np.maximum(np.abs(t1).max(axis=1), np.abs(t2).max(axis=1)))
    b += stabilized
    scale = np.maximum(scale, np.abs(stabilized).max(axis=1))
    # round-off in each addend scales with the largest term anywhere, and
    # an assembly error would show up as an O(1) relative mismatch
    ref = max(float(scale.max()), np.finfo(float).tiny)
    mismatch = np.abs(b.sum(axis=1))
    if np.any(mismatch > COMPAT_TOL * ref):
        worst = int(np.argmax(mismatch))
        raise AssemblyError(f"subcell potential system is incompatible on element {worst} "
                            f"(row sum {mismatch[worst]:.3e}, term scale {ref:.3e})")
    return b


def solve_flux_potentials(space: Space, b: np.ndarray) -> np.ndarray:
    """Solve m~ w = b with the potential of local node 0 pinned to zero."""
    W = np.zeros_like(b)
    W[:, 1:] = b[:, 1:] @ space.pot_inv.T
    return W


def raw_subcell_fluxes(space: Space, W: np.ndarray, U: np.ndarray, d: np.ndarray) -> np.ndarray:
    """f~_ij = m~_ij (w_j - w_i) + d~_ij (u_i - u_j) on the edges (i < j)."""
    ei, ej = space.edge_i, space.edge_j
    return space.mt_edge * (W[:, ej] - W[:, ei]) + d * (U[:, ei] - U[:, ej])


def local_bounds(space: Space, u: np.ndarray):
    """Min and max of u over the full stencil of every node."""
    U = space.gather(u)
    return space.node_min(U.min(axis=1)), space.node_max(U.max(axis=1))


def bar_states(space: Space, U: np.ndarray, F: np.ndarray, d: np.ndarray):
    """LLF bar states (u_bar_ij, u_bar_ji) for every edge.

    Pairs with d~ = 0 carry no limited flux; their bar state is reported as
    the arithmetic mean.
    """
    ei, ej = space.edge_i, space.edge_j
    ui, uj = U[:, ei], U[:, ej]
    dF = F[:, ej] - F[:, ei]  # (E, m, dim)
    flux_ij = np.einsum("emk,mk->em", dF, space.ct_ij)
    flux_ji = -np.einsum("emk,mk->em", dF, space.ct_ji)
    mean = 0.5 * (ui + uj)
    pos = d > 0.0
    safe = np.where(pos, 2.0 * d, 1.0)
    ubar_ij = np.where(pos, mean - flux_ij / safe, mean)
    ubar_ji = np.where(pos, mean - flux_ji / safe, mean)
    return ubar_ij, ubar_ji


def idp_limit(f, ubar_ij, ubar_ji, umin_i, umax_i, umin_j, umax_j, d):
    """Clip f~_ij so both limited bar states stay in their local bounds.

    Bound gaps are floored at zero so that round-off in a bar state can
    never flip the sign of the limited flux.
    """
    up = np.maximum(0.0, 2.0 * d * np.minimum(umax_i - ubar_ij, ubar_ji - umin_j))
    lo = np.minimum(0.0, 2.0 * d * np.maximum(umin_i - ubar_ij, ubar_ji - umax_j))
    return np.where(f > 0.0, np.minimum(f, up), np.maximum(f, lo))


def entropy_rates(space: Space, fields: Fields, d: np.ndarray):
    """LLF entropy rates q~_ij, q~_ji on the edges and the bound p^{e,max}.

    Returns ``(q_ij, q_ji, p_max)``.
    """
    fm = space.flux_model
    U, F = fields.U, fields.F
    xn = None if fm.autonomous else space.xn
    V = fm.v(U)
    Psi = fm.psi(U, xn)
    Q = fm.q(U, xn)
    ei, ej = space.edge_i, space.edge_j
    ui, uj, vi, vj = U[:, ei], U[:, ej], V[:, ei], V[:, ej]
    Fsum = F[:, ei] + F[:, ej]
    dPsi = Psi[:, ej] - Psi[:, ei]
    ct_ij, ct_ji = space.ct_ij, space.ct_ji
    half = 0.5 * (vi - vj)
    q_ij = (half * (d * (uj - ui) - np.einsum("emk,mk->em", Fsum, ct_ij))
            - np.einsum("emk,mk->em", dPsi, ct_ij))
    q_ji = (-half * (d * (ui - uj) - np.einsum("emk,mk->em", Fsum, ct_ji))
            + np.einsum("emk,mk->em", dPsi, ct_ji))

    # p^{e,max}: all element pairs weighted by (c~ - c)
    dv = V[:, :, None] - V[:, None, :]  # v_i - v_j
    p_max = np.zeros(U.shape[0])
    for k in range(space.dim):
        dFk = F[:, None, :, k] - F[:, :, None, k]  # F_j - F_i
        dQk = Q[:, None, :, k] - Q[:, :, None, k]
        p_max += np.einsum("ij,eij->e", space.c_minus[k], 0.5 * dv * dFk + dQk)
    return q_ij, q_ji, p_max


def production_epsilon(q_ij, q_ji, p_max):
    qmax = np.maximum(np.abs(q_ij).max(axis=1), np.abs(q_ji).max(axis=1))
    return 1e-12 * np.maximum(np.maximum(1.0, np.abs(p_max)), qmax)


def distribute_production(q_ij, q_ji, p_max, eps=None):
    """Split min(0, p^{e,max}) over the directed pairs with weights ~ (q~ - eps)."""
    if eps is None:
        eps = production_epsilon(q_ij, q_ji, p_max)
    eps = np.asarray(eps, dtype=float)[..., None]
    a_ij = q_ij - eps
    a_ji = q_ji - eps
    total = a_ij.sum(axis=-1) + a_ji.sum(axis=-1)
    neg = np.minimum(0.0, p_max)[..., None] / total[..., None]
    return a_ij * neg, a_ji * neg


def additional_diffusion(q_ij, q_ji, p_ij, p_ji, ui, uj, vi, vj, eps):
    """Extra LLF diffusion restoring q~ <= p~ where it fails, else 0."""
    need = (q_ij > p_ij) | (q_ji > p_ji)
    m = np.minimum(np.minimum(p_ij - q_ij, 0.0), p_ji - q_ji)
    den = (vi - vj) * (uj - ui) - eps
    return np.where(need, 2.0 * m / den, 0.0)


def entropy_limit(f_star, p_ij, p_ji, q_ij, q_ji, d_add, ui, uj, vi, vj, scale=None):
    """Entropy-correct the bound-preserving fluxes.

    Returns ``(f_bar, pbar_ij, pbar_ji, worst_pbar)`` where ``worst_pbar``
    is the most negative budget before clamping.
    """
    dv = vi - vj
    pbar_ij = p_ij - q_ij - 0.5 * dv * d_add * (uj - ui)
    pbar_ji = p_ji - q_ji + 0.5 * dv * d_add * (ui - uj)
    worst = np.minimum(pbar_ij, pbar_ji)
    if scale is not None:
        if np.any(worst < -PBAR_TOL * scale):
            raise LimiterError(f"negative entropy budget {worst.min():.3e} after additional diffusion")
    pbar_ij = np.maximum(pbar_ij, 0.0)
    pbar_ji = np.maximum(pbar_ji, 0.0)
    prod = dv * f_star
    active = prod > 0.0
    safe = np.where(active, dv, 1.0)
    capped = np.minimum(np.minimum(2.0 * pbar_ij, prod), 2.0 * pbar_ji) / safe
    f_bar = np.where(active, capped, f_star)
    return f_bar, pbar_ij, pbar_ji, worst


def flux_form_rhs(space: Space, U: np.ndarray, F: np.ndarray, d: np.ndarray, f_bar: np.ndarray) -> np.ndarray:
    """du/dt from the lumped-mass flux form for given diffusion and fluxes."""
    inc = _incidence(space)
    ei, ej = space.edge_i, space.edge_j
    ui, uj = U[:, ei], U[:, ej]
    dF = F[:, ej] - F[:, ei]
    low = d * (uj - ui)
    to_i = low + f_bar - np.einsum("emk,mk->em", dF, space.ct_ij)
    to_j = -low - f_bar + np.einsum("emk,mk->em", dF, space.ct_ji)
    local = to_i @ inc.to_i + to_j @ inc.to_j
    return space.scatter(local) / space.lumped_mass


def pair_entropy_defect(f_bar, p_ij, q_total_ij, vi, vj):
    """(v_i - v_j)/2 f_bar_ij - (p~_ij - q'_ij); non-positive when the pairwise
    entropy condition holds.  ``q_total_ij`` is the entropy rate computed with
    the total diffusion d~ + d~_add.
    """
    return 0.5 * (vi - vj) * f_bar - (p_ij - q_total_ij)


def node_diffusion_sums(space: Space, d: np.ndarray) -> np.ndarray:
    """sum_{j in stencil(i)} d_ij per element and local node, (E, n)."""
    inc = _incidence(space)
    return d @ (inc.to_i + inc.to_j)
