import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moserlab.mesh import (
    MeshError,
    TriMesh,
    build_disc_mesh,
    build_polygon_mesh,
    check_simple_polygon,
    polygon_area,
    read_mesh,
    red_refine,
    refine_toward,
    unit_square_mesh,
    write_mesh,
)


@pytest.mark.parametrize("level", [0, 1, 2, 3])
def test_disc_mesh_valid(level):
    m = build_disc_mesh(1.0, level)
    m.validate()
    assert m.domain == {"kind": "disc", "center": [0.0, 0.0], "radius": 1.0}
    assert np.all(m.signed_areas() > 0)


def test_disc_area_converges_quadratically():
    deficits = [math.pi - build_disc_mesh(1.0, lev).area for lev in range(4)]
    assert all(d > 0 for d in deficits)
    ratios = [a / b for a, b in zip(deficits, deficits[1:])]
    # boundary ring counts are rounded to multiples of 6, so the ratio wobbles around 4
    assert all(3.5 < r < 4.7 for r in ratios)


def test_disc_mesh_h_halves():
    hs = [build_disc_mesh(1.0, lev).h_max for lev in range(4)]
    for a, b in zip(hs, hs[1:]):
        assert b == pytest.approx(a / 2, rel=0.2)


def test_disc_mesh_center_and_radius():
    m = build_disc_mesh(2.5, 1, center=(1.0, -2.0))
    m.validate()
    r = np.linalg.norm(m.vertices[m.boundary] - [1.0, -2.0], axis=1)
    np.testing.assert_allclose(r, 2.5, atol=1e-12)
    assert m.domain_area == pytest.approx(math.pi * 6.25)


def test_graded_disc_reaches_core_size():
    m = build_disc_mesh(1.0, 1, core_h=1e-4)
    m.validate()
    assert m.local_h((0.0, 0.0)) <= 2e-4
    # geometric ring growth keeps the vertex count logarithmic in 1/core_h
    assert m.n_vertices < 40000
    assert m.h_max <= build_disc_mesh(1.0, 1).h_max


def test_disc_mesh_d6_symmetry_of_radii():
    m = build_disc_mesh(1.0, 2)
    r = np.round(np.linalg.norm(m.vertices, axis=1), 12)
    _, counts = np.unique(r, return_counts=True)
    assert counts[0] == 1  # centre
    assert np.all(counts[1:] % 6 == 0)


@given(st.integers(3, 9), st.floats(0.2, 3.0), st.floats(0, 2 * math.pi))
@settings(max_examples=30, deadline=None)
def test_convex_polygon_mesh_area_exact(n, radius, phase):
    th = phase + 2 * math.pi * np.arange(n) / n
    poly = radius * np.column_stack([np.cos(th), np.sin(th)])
    m = build_polygon_mesh(poly, 1)
    m.validate()
    assert m.area == pytest.approx(polygon_area(poly), rel=1e-12)
    assert m.domain_area == pytest.approx(polygon_area(poly), rel=1e-12)


def test_nonconvex_polygon_mesh():
    L = [(0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2)]
    m = build_polygon_mesh(L, 2)
    m.validate()
    assert m.area == pytest.approx(3.0, rel=1e-12)


def test_self_intersecting_polygon_rejected():
    with pytest.raises(MeshError):
        check_simple_polygon(np.array([(0, 0), (1, 1), (1, 0), (0, 1)], dtype=float))


def test_clockwise_polygon_rejected():
    with pytest.raises(MeshError):
        build_polygon_mesh([(0, 0), (0, 1), (1, 1), (1, 0)], 0)


def test_unit_square_symmetry():
    m = unit_square_mesh(2)
    flipped = np.column_stack([m.vertices[:, 1], m.vertices[:, 0]])
    a = {tuple(np.round(v, 12)) for v in m.vertices}
    b = {tuple(np.round(v, 12)) for v in flipped}
    assert a == b


def test_red_refine_quadruples_triangles():
    m = unit_square_mesh(1)
    r = red_refine(m)
    r.validate()
    assert r.n_triangles == 4 * m.n_triangles
    assert r.h_max == pytest.approx(m.h_max / 2)


def test_red_refine_projects_disc_boundary():
    r = red_refine(build_disc_mesh(1.0, 0))
    r.validate()


@pytest.mark.parametrize("point", [(0.5, 0.5), (0.3, 0.7)])
def test_refine_toward_grades_and_conforms(point):
    m = unit_square_mesh(2)
    r = refine_toward(m, point, 1e-3)
    r.validate()
    assert r.local_h(point) <= 1e-3 * 1.01
    assert r.area == pytest.approx(1.0, rel=1e-12)
    assert r.n_triangles < 100000


def test_interpolation_reproduces_linear_functions(rng):
    m = build_disc_mesh(1.0, 2)
    f = lambda p: 0.3 + 1.7 * p[:, 0] - 2.2 * p[:, 1]
    pts = rng.uniform(-0.6, 0.6, size=(40, 2))
    np.testing.assert_allclose(m.interpolate(f(m.vertices), pts), f(pts), atol=1e-12)
    assert np.isnan(m.interpolate(f(m.vertices), [[2.0, 0.0]])[0])


def test_distance_to_boundary_disc():
    m = build_disc_mesh(1.0, 2)
    assert m.distance_to_boundary((0.0, 0.0)) == pytest.approx(1.0, abs=0.02)


def test_validate_catches_bad_orientation():
    m = unit_square_mesh(0)
    bad = TriMesh(m.vertices, m.triangles[:, [0, 2, 1]], m.boundary, m.domain)
    with pytest.raises(MeshError):
        bad.validate()


def test_validate_catches_bad_boundary_flags():
    m = unit_square_mesh(1)
    flags = m.boundary.copy()
    flags[np.flatnonzero(~flags)[0]] = True
    with pytest.raises(MeshError):
        TriMesh(m.vertices, m.triangles, flags, m.domain).validate()


@pytest.mark.parametrize("builder", [lambda: build_disc_mesh(1.0, 1), lambda: unit_square_mesh(1)])
def test_mesh_text_round_trip(tmp_path, builder):
    m = builder()
    path = tmp_path / "m.txt"
    write_mesh(m, path)
    back = read_mesh(path)
    np.testing.assert_array_equal(back.vertices, m.vertices)
    np.testing.assert_array_equal(back.triangles, m.triangles)
    np.testing.assert_array_equal(back.boundary, m.boundary)
    assert back.domain == m.domain
    write_mesh(back, tmp_path / "again.txt")
    assert (tmp_path / "again.txt").read_bytes() == path.read_bytes()


def test_read_mesh_rejects_garbage(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("0 0.0 0.0 1\n")
    with pytest.raises(MeshError):
        read_mesh(p)
