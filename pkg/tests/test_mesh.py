import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from entropy_cg.mesh import MeshError, build_mesh, full_stencil, reference_lattice


@pytest.mark.parametrize(
    "dim, cells, p, n_nodes, n_elements",
    [(1, 4, 1, 4, 4), (1, 8, 2, 16, 8), (2, 4, 1, 16, 16), (2, 3, 2, 36, 9)],
)
def test_counts(dim, cells, p, n_nodes, n_elements):
    mesh = build_mesh(dim, (0.0, 1.0), cells, p)
    assert mesh.num_nodes == n_nodes
    assert mesh.num_elements == n_elements
    assert mesh.nodes_per_element == (p + 1) ** dim


def test_q1_nodes_touch_four_elements():
    mesh = build_mesh(2, (0.0, 1.0), 4, 1)
    assert all(len(e) == 4 for e in mesh.node_elements)


@pytest.mark.parametrize("i", [0, 3, 7])
def test_p1_stencil_is_three_nodes(i):
    mesh = build_mesh(1, (0.0, 1.0), 8, 1)
    assert sorted(full_stencil(mesh, i)) == sorted({(i - 1) % 8, i, (i + 1) % 8})


def test_p2_interface_stencil():
    mesh = build_mesh(1, (0.0, 1.0), 8, 2)
    # node 2 is shared by cells 0 and 1
    assert len(full_stencil(mesh, 2)) == 5
    # an interior node only sees its own cell
    assert len(full_stencil(mesh, 1)) == 3


def test_q1_stencil_is_3x3_patch():
    mesh = build_mesh(2, (0.0, 1.0), 4, 1)
    for i in range(mesh.num_nodes):
        assert len(full_stencil(mesh, i)) == 9


def test_local_order_is_x_fastest():
    lat = reference_lattice(2, 2)
    np.testing.assert_allclose(lat[:3, 1], 0.0)
    np.testing.assert_allclose(lat[:3, 0], [0.0, 0.5, 1.0])


def test_unwrapped_coordinates_are_contiguous():
    mesh = build_mesh(1, (0.0, 1.0), 4, 2)
    x = mesh.element_node_coords()
    # the last element ends at 1, not at the folded node 0
    np.testing.assert_allclose(x[-1, :, 0], [0.75, 0.875, 1.0])
    np.testing.assert_allclose(mesh.coords[mesh.conn[-1], 0], [0.75, 0.875, 0.0])


@pytest.mark.parametrize(
    "args",
    [(3, (0.0, 1.0), 4, 1), (1, (0.0, 1.0), 4, 0), (1, (1.0, 0.0), 4, 1), (1, (0.0, 1.0), 1, 1),
     (2, ((0.0, 0.0, 0.0), (1.0, 1.0, 1.0)), 4, 1)],
)
def test_invalid_meshes_raise(args):
    with pytest.raises(MeshError):
        build_mesh(*args)


def test_stencil_index_check():
    mesh = build_mesh(1, (0.0, 1.0), 4, 1)
    with pytest.raises(IndexError):
        full_stencil(mesh, 4)


@settings(max_examples=30, deadline=None)
@given(dim=st.integers(1, 2), cells=st.integers(2, 6), p=st.integers(1, 4))
def test_every_node_is_covered_and_counts_match(dim, cells, p):
    mesh = build_mesh(dim, (-1.0, 2.0), cells, p)
    assert mesh.num_nodes == (p * cells) ** dim
    seen = np.zeros(mesh.num_nodes, dtype=int)
    np.add.at(seen, mesh.conn.ravel(), 1)
    assert seen.min() >= 1
    # nodes of one element are distinct because cells >= 2
    assert all(len(set(row)) == mesh.nodes_per_element for row in mesh.conn)
    for i in range(0, mesh.num_nodes, max(1, mesh.num_nodes // 7)):
        for e in mesh.node_elements[i]:
            assert i in mesh.conn[e]
