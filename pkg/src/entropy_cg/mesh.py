"""Periodic uniform meshes of intervals and quadrilaterals.

Global nodes are the points of the degree-p lattice with periodic
duplicates identified.  Local node ordering inside an element is
lexicographic with the x index running fastest.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Mesh:
    dimension: int
    lower: np.ndarray
    upper: np.ndarray
    cells: tuple[int, ...]
    degree: int
    #: element -> canonical global node indices, shape (E_h, (p+1)^d)
    conn: np.ndarray
    #: canonical node coordinates, shape (N_h, d)
    coords: np.ndarray
    #: lower-left corner of every element, shape (E_h, d)
    origins: np.ndarray
    #: physical lattice (p*n_k + 1 points per direction) -> canonical index
    periodic_map: np.ndarray
    _node_elements: list = field(repr=False, compare=False, default=None)

    @property
    def num_elements(self) -> int:
        return self.conn.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def nodes_per_element(self) -> int:
        return self.conn.shape[1]

    @property
    def cell_size(self) -> np.ndarray:
        return (self.upper - self.lower) / np.asarray(self.cells)

    @property
    def element_volume(self) -> float:
        return float(np.prod(self.cell_size))

    @property
    def h(self) -> float:
        """|K|^(1/d), the element size used by the stabilization parameters."""
        return self.element_volume ** (1.0 / self.dimension)

    @property
    def node_elements(self) -> list[np.ndarray]:
        """E_i for every node (sorted element indices)."""
        return self._node_elements

    def node_element_table(self) -> np.ndarray:
        """E_i padded to a rectangular array by repeating the first entry."""
        width = max(len(ei) for ei in self._node_elements)
        table = np.empty((self.num_nodes, width), dtype=np.int64)
        for i, ei in enumerate(self._node_elements):
            table[i, : len(ei)] = ei
            table[i, len(ei):] = ei[0]
        return table

    def element_node_coords(self, element: int | None = None) -> np.ndarray:
        """Physical (unwrapped) lattice coordinates of element nodes.

        Unlike ``coords`` these are not folded back into the periodic box,
        so every element sees a contiguous lattice.
        """
        lattice = reference_lattice(self.dimension, self.degree)
        scaled = lattice * self.cell_size
        if element is None:
            return self.origins[:, None, :] + scaled[None, :, :]
        return self.origins[element] + scaled


def reference_lattice(dimension: int, degree: int) -> np.ndarray:
    """Equispaced lattice on [0,1]^d in local (x-fastest) order."""
    ticks = np.linspace(0.0, 1.0, degree + 1)
    pts = [tuple(reversed(ix)) for ix in product(range(degree + 1), repeat=dimension)]
    return np.array([[ticks[k] for k in ix] for ix in pts])


def local_multi_indices(dimension: int, degree: int) -> np.ndarray:
    return np.array([tuple(reversed(ix)) for ix in product(range(degree + 1), repeat=dimension)])


def build_mesh(dimension, box, cells_per_direction, degree) -> Mesh:
    """Build a fully periodic uniform mesh.

    ``box`` is ``(lower, upper)`` with scalars or length-d sequences;
    ``cells_per_direction`` is an int or a length-d sequence.
    """
    if dimension not in (1, 2):
        raise MeshError(f"dimension must be 1 or 2, got {dimension}")
    if int(degree) != degree or degree < 1:
        raise MeshError(f"polynomial degree must be >= 1, got {degree}")
    degree = int(degree)

    lower = np.atleast_1d(np.asarray(box[0], dtype=float))
    upper = np.atleast_1d(np.asarray(box[1], dtype=float))
    if lower.size == 1 and dimension == 2:
        lower = np.repeat(lower, 2)
    if upper.size == 1 and dimension == 2:
        upper = np.repeat(upper, 2)
    if lower.shape != (dimension,) or upper.shape != (dimension,):
        raise MeshError("box corners do not match the dimension")
    if np.any(upper <= lower):
        raise MeshError("box upper corner must exceed the lower corner")

    cells = np.atleast_1d(np.asarray(cells_per_direction, dtype=int))
    if cells.size == 1:
        cells = np.repeat(cells, dimension)
    if cells.shape != (dimension,):
        raise MeshError("cells_per_direction does not match the dimension")
    # one periodic cell would make an element its own neighbour
    if np.any(cells < 2):
        raise MeshError("at least 2 cells per periodic direction are required")

    p = degree
    nper = cells * p  # canonical nodes per direction
    hcell = (upper - lower) / cells

    # periodic identification on the unwrapped lattice
    axes = [np.arange(n + 1) % n for n in nper]
    if dimension == 1:
        periodic_map = axes[0].copy()
    else:
        gx, gy = np.meshgrid(axes[0], axes[1], indexing="xy")
        periodic_map = gx + nper[0] * gy  # indexed [iy, ix]

    loc = local_multi_indices(dimension, p)
    elem_idx = [tuple(reversed(ix)) for ix in product(*(range(c) for c in reversed(cells)))]
    elem_idx = np.array(elem_idx, dtype=int)  # x fastest
    origins = lower + elem_idx * hcell

    g = (elem_idx[:, None, :] * p + loc[None, :, :]) % nper
    if dimension == 1:
        conn = g[..., 0]
    else:
        conn = g[..., 0] + nper[0] * g[..., 1]

    grids = [lower[k] + np.arange(nper[k]) * hcell[k] / p for k in range(dimension)]
    if dimension == 1:
        coords = grids[0][:, None]
    else:
        X, Y = np.meshgrid(grids[0], grids[1], indexing="xy")
        coords = np.column_stack([X.ravel(), Y.ravel()])

    n_nodes = int(np.prod(nper))
    buckets: list[list[int]] = [[] for _ in range(n_nodes)]
    for e, row in enumerate(conn):
        for i in np.unique(row):
            buckets[i].append(e)
    node_elements = [np.array(sorted(b), dtype=np.int64) for b in buckets]

    return Mesh(
        dimension=dimension,
        lower=lower,
        upper=upper,
        cells=tuple(int(c) for c in cells),
        degree=p,
        conn=np.ascontiguousarray(conn, dtype=np.int64),
        coords=coords,
        origins=origins,
        periodic_map=periodic_map,
        _node_elements=node_elements,
    )


def full_stencil(mesh: Mesh, i: int) -> np.ndarray:
    """The full stencil N_i: union of the node sets of all elements containing i."""
    if not 0 <= i < mesh.num_nodes:
        raise IndexError(f"node index {i} out of range [0, {mesh.num_nodes})")
    return np.unique(mesh.conn[mesh.node_elements[i]].ravel())
