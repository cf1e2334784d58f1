import math

import numpy as np
import pytest

from beamguide.demo import build_demo_workcell
from beamguide.geom import Ray, unit
from beamguide.workcell import (
    BadTriangleError,
    ParseError,
    StationSpec,
    TargetMark,
    TriMesh,
    ValidationError,
    Workcell,
    auto_stations,
    format_mesh,
    load_workcell,
    parse_mesh,
    point_surface_distance,
    ray_hit,
    ray_hit_brute,
    save_workcell,
    surface_frame,
)

UNIT_SQUARE = TriMesh(
    vertices=[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (1.0, 1.0, 0.0), (0.0, 1.0, 0.0)],
    triangles=[(0, 1, 2), (0, 2, 3)],
)

MINIMAL_CELL = """\
version: 1
mesh: box.tri
targets:
  - id: t1
    group: inner
    point_m: [0.25, 0.25, 0.0]
    direction: [1.0, 0.0, 0.0]
fixtures:
  a: [0.0, 0.0, 0.0]
  b: [1.0, 0.0, 0.0]
  c: [0.0, 1.0, 0.0]
stations:
  - xy_m: [2.0, 0.5]
    yaw_deg: 180.0
"""

BOX_MESH = """\
# a unit square in the z=0 plane
v 0.0 0.0 0.0
v 1.0 0.0 0.0
v 1.0 1.0 0.0
v 0.0 1.0 0.0
t 0 1 2
t 0 2 3
"""


def test_minimal_workcell_counts():
    cell = load_workcell(MINIMAL_CELL, mesh_text=BOX_MESH)
    assert len(cell.mesh) == 2
    assert len(cell.targets) == 1
    assert len(cell.fixtures) == 3
    assert len(cell.stations) == 1


def test_target_off_surface_names_target():
    bad = MINIMAL_CELL.replace("point_m: [0.25, 0.25, 0.0]", "point_m: [0.25, 0.25, 0.02]")
    with pytest.raises(ValidationError, match="t1"):
        load_workcell(bad, mesh_text=BOX_MESH)


def test_target_direction_must_be_tangent():
    bad = MINIMAL_CELL.replace("direction: [1.0, 0.0, 0.0]", "direction: [0.0, 0.1, 1.0]")
    with pytest.raises(ValidationError, match="t1"):
        load_workcell(bad, mesh_text=BOX_MESH)


def test_demo_cell_counts(demo_cell):
    inner = [t for t in demo_cell.targets if t.group == "inner"]
    outer = [t for t in demo_cell.targets if t.group == "outer"]
    assert len(inner) == 17
    assert len(outer) == 36
    assert len(demo_cell.targets) == 53


def test_parse_errors():
    with pytest.raises(ParseError):
        parse_mesh("v 1.0 2.0\nt 0 1 2")
    with pytest.raises(ParseError):
        parse_mesh("w 0 0 0")
    with pytest.raises(ParseError):
        parse_mesh("v 0 0 0")  # no triangles
    with pytest.raises(ParseError):
        load_workcell("version: 2", mesh_text=BOX_MESH)
    with pytest.raises(ParseError):
        load_workcell("[not a mapping]", mesh_text=BOX_MESH)


def test_mesh_explicit_normals():
    text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nt 0 1 2 0.0 0.0 1.0\n"
    mesh = parse_mesh(text)
    assert np.allclose(mesh.normals[0], (0, 0, 1))
    # non-unit normals rejected
    with pytest.raises(ValidationError):
        parse_mesh("v 0 0 0\nv 1 0 0\nv 0 1 0\nt 0 1 2 0.0 0.0 2.0\n")
    # all-or-none rule
    with pytest.raises(ParseError):
        parse_mesh(
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nt 0 1 2 0.0 0.0 1.0\nt 0 2 3\n"
        )


def test_mesh_rejects_bad_indices_and_degenerates():
    with pytest.raises(ValidationError):
        TriMesh(vertices=[(0, 0, 0), (1, 0, 0)], triangles=[(0, 1, 2)])
    with pytest.raises(ValidationError):
        TriMesh(
            vertices=[(0, 0, 0), (1, 0, 0), (2, 0, 0)], triangles=[(0, 1, 2)]
        )  # collinear, zero area


def test_ray_hit_square():
    hit = ray_hit(UNIT_SQUARE, Ray((0.25, 0.25, 2.0), (0.0, 0.0, -1.0)))
    assert hit is not None
    point, tri, dist = hit
    assert np.allclose(point, (0.25, 0.25, 0.0), atol=1e-12)
    assert abs(dist - 2.0) < 1e-12


def test_ray_pointing_away_misses():
    assert ray_hit(UNIT_SQUARE, Ray((0.25, 0.25, 2.0), (0.0, 0.0, 1.0))) is None


def test_ray_hit_matches_brute_force(demo_cell):
    mesh = demo_cell.mesh
    rng = np.random.default_rng(20)
    lo, hi = mesh.bounds()
    center = (lo + hi) / 2
    agree = 0
    for _ in range(1000):
        origin = center + rng.uniform(-4, 4, size=3) + np.array([0, 0, 2.0])
        toward = center + rng.uniform(-1.5, 1.5, size=3)
        ray = Ray(origin, unit(toward - origin))
        fast = ray_hit(mesh, ray)
        slow = ray_hit_brute(mesh, ray)
        if fast is None:
            assert slow is None
        else:
            assert slow is not None
            assert fast[1] == slow[1]
            assert abs(fast[2] - slow[2]) < 1e-9
            agree += 1
    assert agree > 500  # the sample must actually exercise hits


def test_surface_frame_flat():
    n, tu, tv = surface_frame(UNIT_SQUARE, (0.25, 0.25, 0.0), 0)
    assert np.allclose(n, (0, 0, 1))
    assert abs(np.dot(tu, n)) < 1e-12
    assert np.allclose(np.cross(tu, tv), n, atol=1e-12)


def test_surface_frame_vertical_triangle():
    mesh = TriMesh(
        vertices=[(0, 0, 0), (1, 0, 0), (0, 0, 1)],
        triangles=[(0, 2, 1)],  # wound to face +y
    )
    n, _, _ = surface_frame(mesh, (0.2, 0.0, 0.2), 0)
    assert np.allclose(n, (0, 1, 0), atol=1e-12)


def test_surface_frame_random_triangles(demo_cell):
    mesh = demo_cell.mesh
    rng = np.random.default_rng(21)
    for _ in range(100):
        i = int(rng.integers(0, len(mesh)))
        a = mesh.vertices[mesh.triangles[i][0]]
        n, tu, tv = surface_frame(mesh, a, i)
        e1 = mesh._e1[i]
        e2 = mesh._e2[i]
        assert abs(np.dot(n, e1)) < 1e-9
        assert abs(np.dot(n, e2)) < 1e-9
        assert abs(np.dot(tu, n)) < 1e-12
        assert np.allclose(np.cross(n, tu), tv, atol=1e-12)


def test_surface_frame_bad_triangle():
    with pytest.raises(BadTriangleError):
        surface_frame(UNIT_SQUARE, (0, 0, 0), 99)


def test_point_surface_distance():
    d, tri = point_surface_distance(UNIT_SQUARE, (0.25, 0.25, 0.5))
    assert abs(d - 0.5) < 1e-12
    d, _ = point_surface_distance(UNIT_SQUARE, (2.0, 0.0, 0.0))
    assert abs(d - 1.0) < 1e-12
    d, _ = point_surface_distance(UNIT_SQUARE, (0.5, 0.5, 0.0))
    assert d < 1e-12


def test_roundtrip_identity(demo_cell):
    text = save_workcell(demo_cell)
    mesh_text = format_mesh(demo_cell.mesh)
    cell2 = load_workcell(text, mesh_text=mesh_text)
    assert np.array_equal(demo_cell.mesh.vertices, cell2.mesh.vertices)
    assert np.array_equal(demo_cell.mesh.triangles, cell2.mesh.triangles)
    for a, b in zip(demo_cell.targets, cell2.targets):
        assert a.id == b.id and a.group == b.group
        assert np.array_equal(a.point, b.point)
        assert np.array_equal(a.direction, b.direction)
        assert a.tolerance_pos == b.tolerance_pos
        assert a.tolerance_ang_deg == b.tolerance_ang_deg
    assert demo_cell.fixture_sets == cell2.fixture_sets
    for k in demo_cell.fixtures:
        assert np.array_equal(demo_cell.fixtures[k], cell2.fixtures[k])
    assert [(s.x, s.y, s.yaw_deg) for s in demo_cell.stations] == [
        (s.x, s.y, s.yaw_deg) for s in cell2.stations
    ]
    # and the serialized forms are bytewise stable
    assert save_workcell(cell2) == text
    assert format_mesh(cell2.mesh) == mesh_text


def test_auto_station_ring(demo_cell):
    mesh = demo_cell.mesh
    lo, hi = mesh.bounds()
    stations = auto_stations(mesh)
    assert stations
    for s in stations:
        dx = max(lo[0] - s.x, 0.0, s.x - hi[0])
        dy = max(lo[1] - s.y, 0.0, s.y - hi[1])
        d = math.hypot(dx, dy)
        assert 1.0 - 1e-9 <= d <= 2.5 + 1e-9
        # z axis vertical by construction
        assert np.allclose(s.pose.rotation.m[:, 2], (0, 0, 1))


def test_fixture_collinearity_rejected():
    with pytest.raises(ValidationError, match="collinear"):
        Workcell(
            mesh=UNIT_SQUARE,
            targets=[],
            fixtures={
                "a": np.array([0.0, 0.0, 0.0]),
                "b": np.array([1.0, 0.0, 0.0]),
                "c": np.array([2.0, 0.0, 0.0]),
            },
            fixture_sets={"all": ["a", "b", "c"]},
            stations=[StationSpec(2.0, 0.0, 180.0)],
        )


def test_duplicate_target_ids_rejected():
    t = TargetMark(id="x", group="inner", point=(0.25, 0.25, 0.0), direction=(1, 0, 0))
    t2 = TargetMark(id="x", group="outer", point=(0.5, 0.5, 0.0), direction=(0, 1, 0))
    with pytest.raises(ValidationError, match="duplicate"):
        Workcell(
            mesh=UNIT_SQUARE,
            targets=[t, t2],
            fixtures={
                "a": np.array([0.0, 0.0, 0.0]),
                "b": np.array([1.0, 0.0, 0.0]),
                "c": np.array([0.0, 1.0, 0.0]),
            },
            fixture_sets={"all": ["a", "b", "c"]},
            stations=[],
        )
