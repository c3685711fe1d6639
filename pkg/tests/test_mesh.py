import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from straintopo.mesh import (DESIGN, SOLID, TISSUE, VOID, BoundarySpec, ConfigurationError, GridSpec,
                             InputSpec, RegionBox, apply_boundary_conditions, build_grid,
                             mirror_half_to_full, restrict_full_to_half, tag_regions)


def test_numbering_and_geometry():
    mesh = build_grid(GridSpec(3, 2, 3.0, 1.0, 2.0))
    assert mesh.n_elements == 6 and mesh.n_nodes == 12 and mesh.n_dofs == 24
    # element 4 = (ix=1, iy=1): counter-clockwise nodes
    assert list(mesh.elements[4]) == [5, 6, 10, 9]
    assert np.allclose(mesh.centers[4], [1.5, 0.75])
    assert list(mesh.edofs[0]) == [0, 1, 2, 3, 10, 11, 8, 9]
    assert mesh.element_area == pytest.approx(0.5)
    assert mesh.shape.detJ.sum() * 1.0 == pytest.approx(0.5)


def test_invalid_grid():
    with pytest.raises(ConfigurationError):
        GridSpec(0, 2, 1.0, 1.0)
    with pytest.raises(ConfigurationError):
        GridSpec(2, 2, -1.0, 1.0)


def test_edge_nodes_and_span():
    mesh = build_grid(GridSpec(4, 4, 1.0, 1.0))
    left = mesh.edge_nodes("left")
    assert left.size == 5 and np.allclose(mesh.nodes[left, 0], 0.0)
    part = mesh.edge_nodes("left", (0.0, 0.5))
    assert np.allclose(mesh.nodes[part, 1], [0.0, 0.25, 0.5])
    assert mesh.nearest_node(0.99, 0.51) == 2 * 5 + 4  # node (jx=4, jy=2)


def test_region_tagging_roles_and_window():
    mesh = build_grid(GridSpec(10, 10, 10.0, 10.0, 2.0))
    boxes = [RegionBox("solid", 0, 10, 0, 1, thickness=3.0),
             RegionBox("void", 0, 2, 9, 10),
             RegionBox("tissue", 3, 7, 4, 8, tissue=1, window_inset=(1.0, 1.0), modulus=0.1)]
    r = tag_regions(mesh, boxes, modulus=25.0)
    assert np.sum(r.role == SOLID) == 10 and np.sum(r.role == VOID) == 2
    assert np.sum(r.role == TISSUE) == 16 and r.design.size == 72
    assert np.all(r.thickness[r.role == SOLID] == 3.0)
    assert np.all(r.modulus[r.role == TISSUE] == 0.1) and np.all(r.modulus[r.design] == 25.0)
    w = r.window_elements(1)
    assert w.size == 4
    assert np.all((mesh.centers[w, 0] > 4) & (mesh.centers[w, 0] < 6))
    assert np.all((mesh.centers[w, 1] > 5) & (mesh.centers[w, 1] < 7))


def test_window_inset_skipped_on_symmetry_edge():
    mesh = build_grid(GridSpec(10, 5, 10.0, 5.0), symmetry="top")
    r = tag_regions(mesh, [RegionBox("tissue", 3, 7, 3, 5, tissue=1, window_inset=(1.0, 1.0))])
    w = r.window_elements(1)
    # x inset on both sides, y inset only at the bottom
    assert w.size == 2
    assert np.allclose(mesh.centers[w, 1], 4.5)


def test_region_errors():
    mesh = build_grid(GridSpec(10, 10, 1.0, 1.0))
    with pytest.raises(ConfigurationError):
        tag_regions(mesh, [RegionBox("solid", 0.0, 0.55, 0.0, 0.5)])  # misaligned
    with pytest.raises(ConfigurationError):
        tag_regions(mesh, [RegionBox("solid", 0.0, 1.2, 0.0, 0.5)])  # outside
    with pytest.raises(ConfigurationError):
        tag_regions(mesh, [RegionBox("solid", 0.0, 0.5, 0.0, 0.5), RegionBox("void", 0.4, 0.6, 0.0, 0.5)])
    with pytest.raises(ConfigurationError):
        RegionBox("wood", 0, 1, 0, 1)
    with pytest.raises(ConfigurationError):
        tag_regions(mesh, [RegionBox("tissue", 0.4, 0.6, 0.4, 0.6, tissue=1, window_inset=(0.1, 0.1))])


def test_boundary_conditions_and_symmetry_port():
    mesh = build_grid(GridSpec(4, 2, 4.0, 2.0), symmetry="top")
    d = apply_boundary_conditions(mesh, [BoundarySpec("bottom", "fixed")],
                                  InputSpec(0.0, 2.0, "x", spring=10.0, force=-3.0))
    top = mesh.edge_nodes("top")
    assert set(2 * top + 1) <= set(d.fixed)  # symmetry roller
    assert d.spring == pytest.approx(5.0) and d.force == pytest.approx(-1.5)
    assert d.external_force()[d.input_dof] == pytest.approx(-1.5)
    assert np.intersect1d(d.free, d.constrained).size == 0
    assert d.free.size + d.constrained.size == d.n_dofs


def test_prescribed_takes_precedence_and_errors():
    mesh = build_grid(GridSpec(2, 2, 1.0, 1.0))
    d = apply_boundary_conditions(mesh, [BoundarySpec("left", "prescribed", -0.1, "x"),
                                         BoundarySpec("bottom", "fixed")])
    assert 0 in d.prescribed and 0 not in d.fixed
    assert np.allclose(d.prescribed_vector()[d.prescribed], -0.1)
    with pytest.raises(ConfigurationError):
        apply_boundary_conditions(mesh, [])
    with pytest.raises(ConfigurationError):
        apply_boundary_conditions(mesh, [BoundarySpec("left", "fixed")], InputSpec(0.0, 0.0))
    with pytest.raises(ConfigurationError):
        apply_boundary_conditions(mesh, [BoundarySpec("middle", "fixed")])


@given(st.integers(1, 6), st.integers(1, 6), st.sampled_from(["left", "right", "top", "bottom"]))
@settings(max_examples=40, deadline=None)
def test_mirror_restrict_roundtrip(nx, ny, sym):
    rng = np.random.default_rng(nx * 10 + ny)
    half = rng.random(nx * ny)
    full = mirror_half_to_full(half, nx, ny, sym)
    assert full.size == 2 * half.size
    assert np.allclose(restrict_full_to_half(full, nx, ny, sym), half)
    grid = full.reshape((ny, 2 * nx) if sym in ("left", "right") else (2 * ny, nx))
    flipped = grid[:, ::-1] if sym in ("left", "right") else grid[::-1]
    assert np.allclose(grid, flipped)
