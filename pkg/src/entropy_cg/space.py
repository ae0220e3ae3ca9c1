"""Finite element space on a periodic mesh: tabulations, gather/scatter, mass solves.

On a uniform mesh every element has the same operators, so a single
:class:`~entropy_cg.basis.ElementOperators` instance is shared.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .basis import (
    ElementOperators,
    ReferenceBasis,
    assemble_element_operators,
    gauss_rule,
    projection_matrix,
)
from .mesh import Mesh
from .physics import FluxModel

MASS_TOL = 1e-12


class SolverError(RuntimeError):
    pass


def quadrature_points(flux_model: FluxModel, degree: int) -> int:
    """Gauss points per direction for the nonlinear volume terms."""
    k = flux_model.polynomial_degree
    if k is None:
        return degree + 3
    if k <= 1:
        return degree + 2
    # polynomial fluxes of degree k: SUPG-type integrands reach 2kp
    return k * degree + 2


class MassSolver:
    """Factorized global consistent mass matrix with a residual contract."""

    def __init__(self, matrix: sparse.spmatrix, tol: float = MASS_TOL):
        self.matrix = matrix.tocsr()
        self.tol = tol
        self._lu = spla.splu(matrix.tocsc())
        self.last_residual = 0.0

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        x = self._lu.solve(rhs)
        bnorm = np.linalg.norm(rhs)
        if bnorm == 0.0:
            self.last_residual = 0.0
            return x
        r = rhs - self.matrix @ x
        rel = np.linalg.norm(r) / bnorm
        if rel > self.tol:
            x = x + self._lu.solve(r)
            r = rhs - self.matrix @ x
            rel = np.linalg.norm(r) / bnorm
        self.last_residual = rel
        if not np.isfinite(rel) or rel > self.tol:
            raise SolverError(f"mass solve residual {rel:.3e} above {self.tol:.1e}")
        return x


@dataclass
class Fields:
    """Element-wise evaluation of one state."""

    U: np.ndarray  # (E, n) coefficients
    uq: np.ndarray  # (E, nq) values at quadrature points
    grad_uq: np.ndarray  # (E, nq, d)
    fq: np.ndarray  # (E, nq, d)
    dfq: np.ndarray  # (E, nq, d)
    F: np.ndarray  # (E, n, d) nodal flux f(u_j, x_j)


class Space:
    """Degree-p Bernstein (or Lagrange) space on a periodic mesh."""

    def __init__(self, mesh: Mesh, flux_model: FluxModel, basis: str = "bernstein",
                 quad_points: int | None = None):
        if flux_model.dimension != mesh.dimension:
            raise ValueError("flux model and mesh dimensions differ")
        self.mesh = mesh
        self.flux_model = flux_model
        self.basis = ReferenceBasis(basis, mesh.degree, mesh.dimension)
        self.ops: ElementOperators = assemble_element_operators(mesh, 0, self.basis)
        d, p = mesh.dimension, mesh.degree
        self.dim = d
        self.degree = p
        self.n_local = self.basis.size
        self.conn = mesh.conn
        self.num_nodes = mesh.num_nodes
        self.num_elements = mesh.num_elements
        self.volume = mesh.element_volume
        hcell = mesh.cell_size
        self.hcell = hcell

        nq1 = quad_points if quad_points is not None else quadrature_points(flux_model, p)
        self.quad_points_1d = nq1
        qp, qw = gauss_rule(nq1, d)
        self.qp_ref = qp
        self.qw = qw
        self.wdet = qw * self.volume
        self.phi_q = self.basis.values(qp)  # (nq, n)
        self.grad_q = self.basis.gradients(qp) / hcell[:, None, None]  # (d, nq, n)
        lagr = ReferenceBasis("lagrange", p, d)
        self.lagrange_q = lagr.values(qp)
        self.proj_q = projection_matrix(self.basis, qp, qw)
        # physical gradients of the basis at the lattice nodes, (d, n, n)
        self.grad_nodes = self.basis.gradients(self.basis.nodes) / hcell[:, None, None]
        self.phi_nodes = self.ops.nodal_eval

        self.xq = mesh.origins[:, None, :] + (qp * hcell)[None, :, :]
        self.xn = mesh.element_node_coords()

        self.ev_matrix = self.ops.ev_matrix()
        self.edges = self.ops.edges
        ei, ej = self.edges[:, 0], self.edges[:, 1]
        self.edge_i, self.edge_j = ei, ej
        self.ct_ij = self.ops.c_tilde[:, ei, ej].T  # (nedges, d)
        self.ct_ji = self.ops.c_tilde[:, ej, ei].T
        self.mt_edge = self.ops.subcell_mass[ei, ej]
        # pinned potential system: drop local node 0
        self.pot_inv = np.linalg.inv(self.ops.subcell_mass[1:, 1:])
        self.c_minus = self.ops.c_tilde - self.ops.c  # (d, n, n)

        self._node_table = mesh.node_element_table()

    # {{{ assembly helpers

    def gather(self, u: np.ndarray) -> np.ndarray:
        return u[self.conn]

    def scatter(self, element_vectors: np.ndarray) -> np.ndarray:
        return np.bincount(self.conn.ravel(), weights=element_vectors.ravel(),
                           minlength=self.num_nodes)

    @cached_property
    def lumped_mass(self) -> np.ndarray:
        return self.scatter(np.broadcast_to(self.ops.lumped, self.conn.shape))

    @cached_property
    def mass_matrix(self) -> sparse.csr_matrix:
        n = self.n_local
        rows = np.repeat(self.conn, n, axis=1).ravel()
        cols = np.tile(self.conn, (1, n)).ravel()
        vals = np.broadcast_to(self.ops.mass.ravel(), (self.num_elements, n * n)).ravel()
        return sparse.coo_matrix((vals, (rows, cols)), shape=(self.num_nodes,) * 2).tocsr()

    @cached_property
    def mass_solver(self) -> MassSolver:
        return MassSolver(self.mass_matrix)

    def solve_mass(self, rhs: np.ndarray) -> np.ndarray:
        return self.mass_solver.solve(rhs)

    def node_max(self, element_values: np.ndarray) -> np.ndarray:
        """max over elements containing each node."""
        return element_values[self._node_table].max(axis=1)

    def node_min(self, element_values: np.ndarray) -> np.ndarray:
        return element_values[self._node_table].min(axis=1)

    # }}}

    def evaluate(self, u: np.ndarray) -> Fields:
        fm = self.flux_model
        U = self.gather(u)
        uq = U @ self.phi_q.T
        grad_uq = np.stack([U @ self.grad_q[k].T for k in range(self.dim)], axis=-1)
        xq = None if fm.autonomous else self.xq
        xn = None if fm.autonomous else self.xn
        return Fields(
            U=U,
            uq=uq,
            grad_uq=grad_uq,
            fq=fm.f(uq, xq),
            dfq=fm.df(uq, xq),
            F=fm.f(U, xn),
        )

    def values_at_nodes(self, u: np.ndarray) -> np.ndarray:
        """u_h at the lattice nodes of every element, (E, n)."""
        return self.gather(u) @ self.phi_nodes.T

    def interpolate(self, func) -> np.ndarray:
        """Coefficients whose basis expansion has the given values' coefficients.

        For the Bernstein basis this sets u_j = func(x_j); for Lagrange it is
        nodal interpolation.
        """
        return func(self.mesh.coords)

    def project(self, func, extra_points: int = 4) -> np.ndarray:
        """Global L2 projection of a function onto the space."""
        qp, qw = gauss_rule(self.degree + extra_points, self.dim)
        phi = self.basis.values(qp)
        x = self.mesh.origins[:, None, :] + (qp * self.hcell)[None, :, :]
        vals = func(x)
        b = (vals * (qw * self.volume)) @ phi
        return self.solve_mass(self.scatter(b))

    def l1_error(self, u: np.ndarray, exact_values, extra_points: int = 0) -> float:
        """L1 norm of u_h - exact with a rule of exactness 2p+2 per direction."""
        qp, qw = gauss_rule(self.degree + 2 + extra_points, self.dim)
        phi = self.basis.values(qp)
        x = self.mesh.origins[:, None, :] + (qp * self.hcell)[None, :, :]
        uh = self.gather(u) @ phi.T
        return float(np.sum(np.abs(uh - exact_values(x)) * (qw * self.volume)))
