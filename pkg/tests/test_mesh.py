import numpy as np
import pytest

from hnfcavity.mesh import (BoundaryTag, GeometrySpec, Mesh, MeshError, Shape, build_mesh, read_mesh,
                            uniform_refine, validate_mesh, write_mesh)


def _point_in_polygon(px, py, poly):
    """Even-odd ray casting, independent of the mesher's rectangle logic."""
    inside = np.zeros(px.shape, dtype=bool)
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        crosses = (y0 > py) != (y1 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (px < xint)
    return inside


def test_square_n2_counts():
    m = build_mesh(GeometrySpec(Shape.SQUARE), 2)
    assert (m.n_nodes, m.n_triangles, len(m.boundary_edges)) == (9, 8, 8)


def test_square_n4_counts():
    m = build_mesh(GeometrySpec(Shape.SQUARE), 4)
    assert (m.n_nodes, m.n_triangles, len(m.boundary_edges)) == (25, 32, 16)


def test_lshape_working_grid_counts():
    spec = GeometrySpec(Shape.LSHAPE, arm_thickness=0.25)
    m = build_mesh(spec, 100)
    # two 25-cell thick arms overlapping in a 25x25 corner block
    cells = 25 * 100 + 100 * 25 - 25 * 25
    assert m.n_triangles == 2 * cells
    assert m.n_nodes == 26 * 101 + 101 * 26 - 26 * 26
    assert m.area() == pytest.approx(spec.area(), rel=1e-10)


@pytest.mark.parametrize("arm,bridge", [(0.25, 0.25), (0.25, 0.5), (0.375, 0.5)])
def test_hshape_triangle_count_matches_point_in_polygon(arm, bridge):
    spec = GeometrySpec(Shape.HSHAPE, arm_thickness=arm, bridge_height=bridge)
    n = 64
    m = build_mesh(spec, n)
    c = (np.arange(n) + 0.5) / n
    cx, cy = np.meshgrid(c, c)
    cells = int(_point_in_polygon(cx.ravel(), cy.ravel(), spec.outline()).sum())
    assert m.n_triangles == 2 * cells
    assert validate_mesh(m).ok


@pytest.mark.parametrize("shape", list(Shape))
def test_area_matches_outline(shape):
    spec = GeometrySpec(shape)
    m = build_mesh(spec, 16)
    assert m.area() == pytest.approx(spec.area(), rel=1e-10)
    assert np.all(m.signed_areas() > 0)


def test_misaligned_arm_rejected():
    with pytest.raises(MeshError):
        build_mesh(GeometrySpec(Shape.LSHAPE, arm_thickness=0.3), 8)


def test_snap_moves_grid_line_onto_breakpoint():
    spec = GeometrySpec(Shape.HSHAPE, arm_thickness=0.46, bridge_height=0.5)
    m = build_mesh(spec, 64, snap=True)
    assert validate_mesh(m).ok
    assert np.any(np.isclose(m.nodes[:, 0], 0.46, atol=1e-14))
    assert m.area() == pytest.approx(spec.area(), rel=1e-10)


def test_invalid_specs():
    with pytest.raises(MeshError):
        GeometrySpec(Shape.LSHAPE, arm_thickness=1.0)
    with pytest.raises(MeshError):
        GeometrySpec(Shape.SQUARE, heater_extent=0.0)
    with pytest.raises(MeshError):
        GeometrySpec(Shape.HSHAPE, arm_thickness=0.5)


def test_tags_square():
    m = build_mesh(GeometrySpec(Shape.SQUARE), 4)
    x = m.nodes[m.boundary_edges].mean(axis=1)
    tags = m.boundary_tags
    assert np.all(np.isclose(x[tags == BoundaryTag.HOT, 0], 0.0))
    assert np.all(np.isclose(x[tags == BoundaryTag.COLD, 0], 1.0))
    assert (tags == BoundaryTag.HOT).sum() == 4
    assert (tags == BoundaryTag.COLD).sum() == 4


def test_partial_heater_is_bottom_anchored():
    m = build_mesh(GeometrySpec(Shape.LSHAPE, heater_extent=0.6), 20)
    hot = m.nodes[m.edges_with_tag(BoundaryTag.HOT)]
    assert hot[..., 1].max() == pytest.approx(0.6)
    assert hot[..., 1].min() == pytest.approx(0.0)
    left = m.boundary_edges[np.isclose(m.nodes[m.boundary_edges][..., 0], 0).all(axis=1)]
    assert len(left) == 20


def test_boundary_edges_counterclockwise():
    m = build_mesh(GeometrySpec(Shape.HSHAPE), 16)
    a, b = m.nodes[m.boundary_edges[:, 0]], m.nodes[m.boundary_edges[:, 1]]
    # shoelace over the boundary edges equals the enclosed area
    assert 0.5 * np.sum(a[:, 0] * b[:, 1] - b[:, 0] * a[:, 1]) == pytest.approx(m.area())


def test_hshape_reflection_symmetry():
    spec = GeometrySpec(Shape.HSHAPE)
    m = build_mesh(spec, 32)
    mirrored = m.nodes.copy()
    mirrored[:, 0] = spec.outer_width - mirrored[:, 0]
    key = lambda p: set(map(tuple, np.round(p, 12)))
    assert key(mirrored) == key(m.nodes)
    tri = {frozenset(map(tuple, np.round(m.nodes[t], 12))) for t in m.triangles}
    tri_m = {frozenset(map(tuple, np.round(mirrored[t], 12))) for t in m.triangles}
    assert tri == tri_m
    hot_len = np.linalg.norm(np.diff(m.nodes[m.edges_with_tag(BoundaryTag.HOT)], axis=1), axis=-1).sum()
    cold_len = np.linalg.norm(np.diff(m.nodes[m.edges_with_tag(BoundaryTag.COLD)], axis=1), axis=-1).sum()
    assert hot_len == pytest.approx(cold_len)


def test_uniform_refine():
    m = build_mesh(GeometrySpec(Shape.SQUARE), 2)
    r = uniform_refine(m)
    assert r.n_triangles == 32
    assert validate_mesh(r).ok
    assert abs(r.max_edge_length() - 0.5 * m.max_edge_length()) <= 1e-12
    assert r.area() == pytest.approx(m.area(), rel=1e-14)
    assert r.resolution == 4
    assert len(r.boundary_edges) == 2 * len(m.boundary_edges)


def test_refine_preserves_tags_and_area_lshape():
    m = build_mesh(GeometrySpec(Shape.LSHAPE), 8)
    r = uniform_refine(m)
    for tag in BoundaryTag:
        a = np.linalg.norm(np.diff(m.nodes[m.edges_with_tag(tag)], axis=1), axis=-1).sum()
        b = np.linalg.norm(np.diff(r.nodes[r.edges_with_tag(tag)], axis=1), axis=-1).sum()
        assert a == pytest.approx(b)
    assert r.area() == pytest.approx(m.area(), rel=1e-12)


def test_validate_reports_flipped_triangle():
    m = build_mesh(GeometrySpec(Shape.SQUARE), 4)
    tri = m.triangles.copy()
    tri[5] = tri[5, ::-1]
    bad = Mesh(m.nodes, tri, m.boundary_edges, m.boundary_tags, 4)
    rep = validate_mesh(bad)
    assert not rep.checks["positive_area"]
    assert rep.offenders["positive_area"] == "triangle 5"


def test_validate_reports_missing_boundary_edge():
    m = build_mesh(GeometrySpec(Shape.SQUARE), 4)
    bad = Mesh(m.nodes, m.triangles, m.boundary_edges[1:], m.boundary_tags[1:], 4)
    rep = validate_mesh(bad)
    assert not rep.checks["boundary_closed"]


def test_validate_hshape_n64():
    assert validate_mesh(build_mesh(GeometrySpec(Shape.HSHAPE), 64)).ok


def test_mesh_io_roundtrip(tmp_path):
    m = build_mesh(GeometrySpec(Shape.HSHAPE, arm_thickness=0.46, bridge_height=0.5), 16, snap=True)
    path = tmp_path / "h.mesh"
    write_mesh(m, path)
    header = path.read_text().splitlines()[0]
    assert header == f"nodes {m.n_nodes} triangles {m.n_triangles} edges {len(m.boundary_edges)}"
    back = read_mesh(path)
    assert np.array_equal(back.nodes, m.nodes)
    assert np.array_equal(back.triangles, m.triangles)
    assert np.array_equal(back.boundary_tags, m.boundary_tags)


def test_read_mesh_bad_header(tmp_path):
    p = tmp_path / "bad.mesh"
    p.write_text("vertices 3\n")
    with pytest.raises(MeshError, match="line 1"):
        read_mesh(p)


def test_row_major_node_order():
    m = build_mesh(GeometrySpec(Shape.SQUARE), 4)
    order = np.lexsort((m.nodes[:, 0], m.nodes[:, 1]))
    assert np.array_equal(order, np.arange(m.n_nodes))
