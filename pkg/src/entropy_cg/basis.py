"""Reference bases, quadrature and per-element operators.

All reference quantities live on [0,1]^d.  Elements of a uniform mesh
are axis-aligned boxes, so physical operators are reference operators
scaled by the cell size.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np
from numpy.polynomial import legendre

from .mesh import Mesh, local_multi_indices, reference_lattice

MAX_EXACTNESS = 200
TRUNCATION = 1e-13


class AssemblyError(RuntimeError):
    pass


# {{{ quadrature


@lru_cache(maxsize=None)
def _gauss_1d(npts: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


def gauss_rule(points_per_direction: int, dimension: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss-Legendre rule on [0,1]^d, x index fastest."""
    x, w = _gauss_1d(int(points_per_direction))
    if dimension == 1:
        return x[:, None].copy(), w.copy()
    X, Y = np.meshgrid(x, x, indexing="xy")
    WX, WY = np.meshgrid(w, w, indexing="xy")
    return np.column_stack([X.ravel(), Y.ravel()]), (WX * WY).ravel()


def quadrature_rule(degree_of_exactness: int, dimension: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss tensor rule integrating polynomials of the given degree exactly."""
    if degree_of_exactness < 1:
        raise ValueError("degree of exactness must be >= 1")
    if degree_of_exactness > MAX_EXACTNESS:
        raise ValueError(f"degree of exactness {degree_of_exactness} exceeds {MAX_EXACTNESS}")
    npts = (degree_of_exactness + 2) // 2
    return gauss_rule(npts, dimension)


# }}}


# {{{ 1D bases


def bernstein_1d(p: int, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    k = np.arange(p + 1)
    binom = np.array([comb(p, i) for i in k], dtype=float)
    return binom * x[:, None] ** k * (1.0 - x[:, None]) ** (p - k)


def bernstein_1d_deriv(p: int, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.zeros((x.size, p + 1))
    lower = bernstein_1d(p - 1, x)
    out[:, 1:] += p * lower
    out[:, :-1] -= p * lower
    return out


def lagrange_1d(p: int, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    nodes = np.linspace(0.0, 1.0, p + 1)
    out = np.ones((x.size, p + 1))
    for k in range(p + 1):
        for m in range(p + 1):
            if m != k:
                out[:, k] *= (x - nodes[m]) / (nodes[k] - nodes[m])
    return out


def lagrange_1d_deriv(p: int, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    nodes = np.linspace(0.0, 1.0, p + 1)
    out = np.zeros((x.size, p + 1))
    for k in range(p + 1):
        denom = np.prod([nodes[k] - nodes[m] for m in range(p + 1) if m != k])
        for skip in range(p + 1):
            if skip == k:
                continue
            term = np.ones(x.size)
            for m in range(p + 1):
                if m not in (k, skip):
                    term *= x - nodes[m]
            out[:, k] += term
        out[:, k] /= denom
    return out


_BASES_1D = {
    "bernstein": (bernstein_1d, bernstein_1d_deriv),
    "lagrange": (lagrange_1d, lagrange_1d_deriv),
}


# }}}


@dataclass(frozen=True)
class ReferenceBasis:
    """Tensor-product Bernstein or Lagrange basis of degree p on [0,1]^d."""

    kind: str
    degree: int
    dimension: int

    def __post_init__(self):
        if self.kind not in _BASES_1D:
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if self.degree < 1:
            raise ValueError("degree must be >= 1")

    @property
    def size(self) -> int:
        return (self.degree + 1) ** self.dimension

    @property
    def nodes(self) -> np.ndarray:
        return reference_lattice(self.dimension, self.degree)

    def values(self, points: np.ndarray) -> np.ndarray:
        """Basis values, shape (npts, nbasis)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        f, _ = _BASES_1D[self.kind]
        idx = local_multi_indices(self.dimension, self.degree)
        out = np.ones((points.shape[0], self.size))
        for k in range(self.dimension):
            out *= f(self.degree, points[:, k])[:, idx[:, k]]
        return out

    def gradients(self, points: np.ndarray) -> np.ndarray:
        """Reference gradients, shape (d, npts, nbasis)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        f, df = _BASES_1D[self.kind]
        idx = local_multi_indices(self.dimension, self.degree)
        vals = [f(self.degree, points[:, k])[:, idx[:, k]] for k in range(self.dimension)]
        ders = [df(self.degree, points[:, k])[:, idx[:, k]] for k in range(self.dimension)]
        out = np.empty((self.dimension, points.shape[0], self.size))
        for k in range(self.dimension):
            g = ders[k].copy()
            for m in range(self.dimension):
                if m != k:
                    g *= vals[m]
            out[k] = g
        return out


# {{{ subcell (piecewise Q1) machinery


def _subcells(dimension: int, degree: int) -> np.ndarray:
    """Vertex lists of the p^d lattice subcells, local Q1 vertex order x-fastest."""
    n1 = degree + 1
    cells = []
    corners = local_multi_indices(dimension, 1)
    for cell in local_multi_indices(dimension, degree - 1):
        verts = []
        for c in corners:
            ix = cell + c
            verts.append(ix[0] if dimension == 1 else ix[0] + n1 * ix[1])
        cells.append(verts)
    return np.array(cells, dtype=int)


def _q1_values(points: np.ndarray) -> np.ndarray:
    return ReferenceBasis("lagrange", 1, points.shape[1]).values(points)


@lru_cache(maxsize=None)
def _subcell_matrices(dimension: int, degree: int):
    """Reference (unit element) subcell Q1 mass and EV fluctuation matrices.

    Returns ``(mass, fluct)`` acting on nodal values, where ``fluct`` is the
    Gram matrix of ``i_h1 w - i_h0 w`` in L2(K).
    """
    n = (degree + 1) ** dimension
    sub_vol = (1.0 / degree) ** dimension
    qp, qw = gauss_rule(2, dimension)
    phi = _q1_values(qp)
    local_mass = sub_vol * phi.T @ (qw[:, None] * phi)
    nv = 2 ** dimension
    avg = np.full(nv, 1.0 / nv)
    local_fluct = local_mass - sub_vol * np.outer(avg, avg)
    mass = np.zeros((n, n))
    fluct = np.zeros((n, n))
    for verts in _subcells(dimension, degree):
        mass[np.ix_(verts, verts)] += local_mass
        fluct[np.ix_(verts, verts)] += local_fluct
    return mass, fluct


def _locate_subcell(points: np.ndarray, degree: int):
    cell = np.minimum(np.floor(points * degree).astype(int), degree - 1)
    local = points * degree - cell
    return cell, local


def subcell_interpolants(element_operators: "ElementOperators", nodal_values):
    """Return evaluators of i_h1 (piecewise Q1) and i_h0 (subcell means).

    ``nodal_values`` are point values at the element lattice nodes.  The
    evaluators take reference coordinates in [0,1]^d.
    """
    ops = element_operators
    values = np.asarray(nodal_values, dtype=float)
    d, p = ops.dimension, ops.degree
    n1 = p + 1

    def vertex_values(points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        cell, local = _locate_subcell(points, p)
        corners = local_multi_indices(d, 1)
        idx = cell[:, None, :] + corners[None, :, :]
        flat = idx[..., 0] if d == 1 else idx[..., 0] + n1 * idx[..., 1]
        return values[flat], local

    def i_h1(points):
        vv, local = vertex_values(points)
        return np.sum(_q1_values(local) * vv, axis=1)

    def i_h0(points):
        vv, _ = vertex_values(points)
        return vv.mean(axis=1)

    return i_h1, i_h0


# }}}


# {{{ local L2 projection onto degree p-1


def _legendre_tensor(points: np.ndarray, degree: int) -> np.ndarray:
    """Shifted Legendre tensor basis of Q_degree on [0,1]^d, shape (npts, nmodes)."""
    d = points.shape[1]
    idx = local_multi_indices(d, degree)
    out = np.ones((points.shape[0], idx.shape[0]))
    for k in range(d):
        tab = legendre.legvander(2.0 * points[:, k] - 1.0, degree)
        out *= tab[:, idx[:, k]]
    return out


def projection_matrix(basis: ReferenceBasis, points: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Map element coefficients to values of the Q_{p-1} L2 projection at ``points``.

    The projection is computed with the supplied quadrature, which must be
    exact for degree 2p integrands.
    """
    low = _legendre_tensor(points, basis.degree - 1)
    gram = low.T @ (weights[:, None] * low)
    rhs = low.T @ (weights[:, None] * basis.values(points))
    return low @ np.linalg.solve(gram, rhs)


def local_projection_pm1(element_operators: "ElementOperators", coefficients):
    """Evaluator of the L2(K) projection of u_h onto Q_{p-1}(K)."""
    ops = element_operators
    coeffs = np.asarray(coefficients, dtype=float)
    qp, qw = gauss_rule(ops.degree + 2, ops.dimension)
    low_q = _legendre_tensor(qp, ops.degree - 1)
    gram = low_q.T @ (qw[:, None] * low_q)
    moments = low_q.T @ (qw * (ops.basis.values(qp) @ coeffs))
    modes = np.linalg.solve(gram, moments)

    def evaluate(points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return _legendre_tensor(points, ops.degree - 1) @ modes

    return evaluate


# }}}


@dataclass(frozen=True)
class ElementOperators:
    """Physical operators of one axis-aligned element."""

    basis: ReferenceBasis
    cell_size: np.ndarray
    #: consistent mass m_ij^e
    mass: np.ndarray
    #: lumped masses m_i^e
    lumped: np.ndarray
    #: c_ij^e = int phi_i grad phi_j, shape (d, n, n)
    c: np.ndarray
    #: lumped gradient M_L M_C^{-1} C (truncated), shape (d, n, n)
    c_tilde: np.ndarray
    #: subcell mass with negative row-sum diagonal
    subcell_mass: np.ndarray
    #: compact stencil incidence (without diagonal)
    stencil: np.ndarray
    #: undirected compact-stencil pairs (i < j), shape (nedges, 2)
    edges: np.ndarray
    #: B[j, k] = phi_k(x_j): coefficients -> nodal values
    nodal_eval: np.ndarray
    #: Gram matrix of (i_h1 - i_h0) acting on nodal values
    fluctuation: np.ndarray

    @property
    def dimension(self) -> int:
        return self.basis.dimension

    @property
    def degree(self) -> int:
        return self.basis.degree

    @property
    def volume(self) -> float:
        return float(np.prod(self.cell_size))

    @property
    def nodes(self) -> np.ndarray:
        return self.basis.nodes

    def compact_stencil(self, i: int) -> np.ndarray:
        """Ñ_i^e including i itself."""
        return np.sort(np.append(np.flatnonzero(self.stencil[i]), i))

    def ev_matrix(self) -> np.ndarray:
        """Coefficient-space matrix of int (i1 w - i0 w)(i1 v - i0 v)."""
        return self.nodal_eval.T @ self.fluctuation @ self.nodal_eval


def assemble_element_operators(mesh: Mesh, element: int, basis: ReferenceBasis) -> ElementOperators:
    if not 0 <= element < mesh.num_elements:
        raise IndexError(f"element {element} not in mesh")
    if basis.dimension != mesh.dimension or basis.degree != mesh.degree:
        raise ValueError("basis does not match the mesh")
    d, p = mesh.dimension, mesh.degree
    hcell = mesh.cell_size
    vol = float(np.prod(hcell))

    qp, qw = gauss_rule(p + 2, d)
    phi = basis.values(qp)
    dphi = basis.gradients(qp) / hcell[:, None, None]
    mass = vol * phi.T @ (qw[:, None] * phi)
    c = np.stack([vol * phi.T @ (qw[:, None] * dphi[k]) for k in range(d)])

    try:
        np.linalg.cholesky(mass)
    except np.linalg.LinAlgError as exc:
        raise AssemblyError("element mass matrix is not positive definite") from exc
    lumped = mass.sum(axis=1)
    if np.any(lumped <= 0.0) and basis.kind == "bernstein":
        raise AssemblyError("non-positive lumped mass")

    c_tilde = np.stack([lumped[:, None] * np.linalg.solve(mass, c[k]) for k in range(d)])
    c_tilde[np.abs(c_tilde) < TRUNCATION * np.abs(c_tilde).max()] = 0.0
    # rows of M^{-1} C sum to zero in exact arithmetic; the diagonal absorbs
    # the solve and truncation round-off so the identity holds to the last bit
    n = lumped.size
    off = c_tilde.copy()
    off[:, np.arange(n), np.arange(n)] = 0.0
    c_tilde[:, np.arange(n), np.arange(n)] = -off.sum(axis=2)
    norm = np.sqrt(np.sum(c_tilde**2, axis=0))
    stencil = (norm + norm.T) > 0.0
    np.fill_diagonal(stencil, False)
    edges = np.argwhere(np.triu(stencil))

    sub_mass_ref, fluct_ref = _subcell_matrices(d, p)
    subcell_mass = np.where(stencil, vol * sub_mass_ref, 0.0)
    np.fill_diagonal(subcell_mass, -subcell_mass.sum(axis=1))

    nodal_eval = basis.values(basis.nodes)

    return ElementOperators(
        basis=basis,
        cell_size=hcell.copy(),
        mass=mass,
        lumped=lumped,
        c=c,
        c_tilde=c_tilde,
        subcell_mass=subcell_mass,
        stencil=stencil,
        edges=edges,
        nodal_eval=nodal_eval,
        fluctuation=vol * fluct_ref,
    )


def global_skew_check(mesh: Mesh, operators) -> float:
    """max_ij |sum_e (c_ij^e + c_ji^e)| over the assembled periodic mesh.

    ``operators`` is a single ElementOperators shared by all elements or a
    sequence with one entry per element.
    """
    from scipy import sparse

    d = mesh.dimension
    n_nodes = mesh.num_nodes
    conn = mesh.conn
    rows = np.repeat(conn, conn.shape[1], axis=1).ravel()
    cols = np.tile(conn, (1, conn.shape[1])).ravel()
    worst = 0.0
    for k in range(d):
        if isinstance(operators, ElementOperators):
            vals = np.broadcast_to(operators.c[k].ravel(), (mesh.num_elements, conn.shape[1] ** 2))
        else:
            vals = np.stack([op.c[k].ravel() for op in operators])
        C = sparse.coo_matrix((vals.ravel(), (rows, cols)), shape=(n_nodes, n_nodes)).tocsr()
        defect = C + C.T
        if defect.nnz:
            worst = max(worst, float(np.abs(defect.data).max()))
    return worst
