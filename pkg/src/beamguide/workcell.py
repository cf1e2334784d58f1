"""Workpiece model: triangle mesh, target marks, fixtures, base stations.

The mesh stands in for CAD data: a plain-text triangle file plus a YAML
workcell file listing targets (point + in-surface direction), named
fixture reference points, and candidate base stations. File schemas are
documented in docs/formats.md.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .geom import RigidTransform, rot_z, unit

MIN_TRIANGLE_AREA = 1e-12  # m^2
RAY_EPSILON = 1e-9  # hits closer than this are ignored (self-intersection guard)

DEFAULT_TOLERANCE_POS = 0.005  # m
DEFAULT_TOLERANCE_ANG_DEG = 1.0

# Auto-generated station ring around the mesh footprint.
STATION_GRID_STEP = 0.5  # m
STATION_RING_NEAR = 1.0  # m outside the footprint box
STATION_RING_FAR = 2.5


class ParseError(ValueError):
    """File is syntactically malformed."""


class ValidationError(ValueError):
    """File parsed but an invariant is violated; names the offending entity."""


class BadTriangleError(IndexError):
    """Triangle id out of range."""


class TriMesh:
    """Indexed triangle soup with outward normals.

    Normals are taken from the file when present, otherwise computed from
    the winding order (counter-clockwise seen from outside).
    """

    def __init__(self, vertices, triangles, normals=None):
        self.vertices = np.asarray(vertices, dtype=float).reshape(-1, 3)
        self.triangles = np.asarray(triangles, dtype=int).reshape(-1, 3)
        n_v = len(self.vertices)
        if self.triangles.size and (
            self.triangles.min() < 0 or self.triangles.max() >= n_v
        ):
            raise ValidationError("triangle index out of range")
        a = self.vertices[self.triangles[:, 0]]
        b = self.vertices[self.triangles[:, 1]]
        c = self.vertices[self.triangles[:, 2]]
        cross = np.cross(b - a, c - a)
        areas = 0.5 * np.linalg.norm(cross, axis=1)
        bad = np.nonzero(areas <= MIN_TRIANGLE_AREA)[0]
        if bad.size:
            raise ValidationError(f"triangle {bad[0]} is degenerate (area {areas[bad[0]]:.3e})")
        if normals is None:
            self.normals = cross / (2.0 * areas[:, None])
        else:
            normals = np.asarray(normals, dtype=float).reshape(-1, 3)
            if len(normals) != len(self.triangles):
                raise ValidationError("normal count does not match triangle count")
            lens = np.linalg.norm(normals, axis=1)
            if np.any(np.abs(lens - 1.0) > 1e-6):
                raise ValidationError("explicit normals must be unit length")
            self.normals = normals
        self.areas = areas
        # cached corner/edge arrays for the vectorized ray test
        self._a, self._e1, self._e2 = a, b - a, c - a

    def __len__(self) -> int:
        return len(self.triangles)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


def ray_hit(mesh: TriMesh, ray) -> tuple[np.ndarray, int, float] | None:
    """Nearest ray-mesh intersection as (point, triangle id, distance).

    Moller-Trumbore over all triangles at once; hits nearer than
    RAY_EPSILON are discarded so rays may start on the surface.
    """
    d = ray.direction
    pvec = np.cross(d, mesh._e2)
    det = np.einsum("ij,ij->i", mesh._e1, pvec)
    ok = np.abs(det) > 1e-12
    inv_det = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tvec = ray.origin - mesh._a
    u = np.einsum("ij,ij->i", tvec, pvec) * inv_det
    qvec = np.cross(tvec, mesh._e1)
    v = (qvec @ d) * inv_det
    t = np.einsum("ij,ij->i", qvec, mesh._e2) * inv_det
    ok &= (u >= -1e-12) & (v >= -1e-12) & (u + v <= 1.0 + 1e-12) & (t > RAY_EPSILON)
    if not ok.any():
        return None
    t = np.where(ok, t, np.inf)
    idx = int(np.argmin(t))
    dist = float(t[idx])
    return ray.origin + dist * d, idx, dist


def ray_hit_brute(mesh: TriMesh, ray) -> tuple[np.ndarray, int, float] | None:
    """Plain per-triangle scan; reference oracle for ray_hit."""
    best = None
    o, d = ray.origin, ray.direction
    for i in range(len(mesh)):
        a = mesh._a[i]
        e1, e2 = mesh._e1[i], mesh._e2[i]
        p = np.cross(d, e2)
        det = float(e1 @ p)
        if abs(det) <= 1e-12:
            continue
        tv = o - a
        u = float(tv @ p) / det
        if u < -1e-12 or u > 1.0 + 1e-12:
            continue
        q = np.cross(tv, e1)
        v = float(d @ q) / det
        if v < -1e-12 or u + v > 1.0 + 1e-12:
            continue
        t = float(e2 @ q) / det
        if t <= RAY_EPSILON:
            continue
        if best is None or t < best[2]:
            best = (o + t * d, i, t)
    return best


def surface_frame(mesh: TriMesh, point, triangle_id: int):
    """Right-handed (normal, tangent_u, tangent_v) at a point on a triangle."""
    if not 0 <= triangle_id < len(mesh):
        raise BadTriangleError(f"triangle id {triangle_id} out of range")
    n = mesh.normals[triangle_id]
    p = np.asarray(point, dtype=float)
    off = abs(float((p - mesh._a[triangle_id]) @ n))
    if off > 1e-6:
        raise ValidationError(
            f"point is {off:.2e} m off the plane of triangle {triangle_id}"
        )
    t_u = unit(mesh._e1[triangle_id] - (mesh._e1[triangle_id] @ n) * n)
    t_v = np.cross(n, t_u)
    return n, t_u, t_v


def point_triangle_distances(mesh: TriMesh, point) -> np.ndarray:
    """Distance from a point to every triangle, vectorized."""
    p = np.asarray(point, dtype=float)
    a, e1, e2 = mesh._a, mesh._e1, mesh._e2
    ap = p - a
    d1 = np.einsum("ij,ij->i", e1, ap)
    d2 = np.einsum("ij,ij->i", e2, ap)
    bp = ap - e1
    d3 = np.einsum("ij,ij->i", e1, bp)
    d4 = np.einsum("ij,ij->i", e2, bp)
    cp = ap - e2
    d5 = np.einsum("ij,ij->i", e1, cp)
    d6 = np.einsum("ij,ij->i", e2, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v_in = np.where(denom != 0, vb / denom, 0.0)
        w_in = np.where(denom != 0, vc / denom, 0.0)
        w_ab = np.clip(np.where(d1 != d3, d1 / (d1 - d3), 0.0), 0.0, 1.0)
        w_ac = np.clip(np.where(d2 != d6, d2 / (d2 - d6), 0.0), 0.0, 1.0)
        bc_den = (d4 - d3) + (d5 - d6)
        w_bc = np.clip(np.where(bc_den != 0, (d4 - d3) / bc_den, 0.0), 0.0, 1.0)

    # region masks, applied in Ericson's order
    closest = ap - (v_in[:, None] * e1 + w_in[:, None] * e2)
    m = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
    closest[m] = bp[m] - w_bc[m, None] * (e2[m] - e1[m])
    m = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    closest[m] = ap[m] - w_ac[m, None] * e2[m]
    m = (d6 >= 0) & (d5 <= d6)
    closest[m] = cp[m]
    m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    closest[m] = ap[m] - w_ab[m, None] * e1[m]
    m = (d3 >= 0) & (d4 <= d3)
    closest[m] = bp[m]
    m = (d1 <= 0) & (d2 <= 0)
    closest[m] = ap[m]
    return np.linalg.norm(closest, axis=1)


def point_surface_distance(mesh: TriMesh, point) -> tuple[float, int]:
    """Distance from a point to the mesh and the closest triangle id."""
    d = point_triangle_distances(mesh, point)
    i = int(np.argmin(d))
    return float(d[i]), i


def _point_triangle_distance(p, a, e1, e2) -> float:
    # Ericson's closest-point-on-triangle, region by region.
    ap = p - a
    d1, d2 = float(e1 @ ap), float(e2 @ ap)
    if d1 <= 0.0 and d2 <= 0.0:
        return float(np.linalg.norm(ap))
    bp = ap - e1
    d3, d4 = float(e1 @ bp), float(e2 @ bp)
    if d3 >= 0.0 and d4 <= d3:
        return float(np.linalg.norm(bp))
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        w = d1 / (d1 - d3)
        return float(np.linalg.norm(ap - w * e1))
    cp = ap - e2
    d5, d6 = float(e1 @ cp), float(e2 @ cp)
    if d6 >= 0.0 and d5 <= d6:
        return float(np.linalg.norm(cp))
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return float(np.linalg.norm(ap - w * e2))
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return float(np.linalg.norm(bp - w * (e2 - e1)))
    denom = 1.0 / (va + vb + vc)
    v, w = vb * denom, vc * denom
    return float(np.linalg.norm(ap - (v * e1 + w * e2)))


@dataclass
class TargetMark:
    """Nominal mark: a surface point plus the in-surface marking direction."""

    id: str
    group: str  # "inner" | "outer"
    point: np.ndarray
    direction: np.ndarray
    tolerance_pos: float = DEFAULT_TOLERANCE_POS
    tolerance_ang_deg: float = DEFAULT_TOLERANCE_ANG_DEG

    @property
    def tolerance_ang(self) -> float:
        return math.radians(self.tolerance_ang_deg)

    def __post_init__(self):
        self.point = np.asarray(self.point, dtype=float)
        d = np.asarray(self.direction, dtype=float)
        n = np.linalg.norm(d)
        if n < 1e-12:
            raise ValidationError(f"target {self.id}: zero direction")
        # keep the caller's bits when already unit so round-trips are exact
        self.direction = d if abs(n - 1.0) <= 1e-9 else d / n
        if self.group not in ("inner", "outer"):
            raise ValidationError(f"target {self.id}: group must be inner or outer")
        if self.tolerance_pos <= 0:
            raise ValidationError(f"target {self.id}: tolerance_pos must be positive")


@dataclass
class StationSpec:
    """Floor-plane base pose: position plus heading, z axis kept vertical."""

    x: float
    y: float
    yaw_deg: float

    @property
    def pose(self) -> RigidTransform:
        return RigidTransform(rot_z(math.radians(self.yaw_deg)), (self.x, self.y, 0.0))


@dataclass
class Workcell:
    mesh: TriMesh
    targets: list[TargetMark]
    fixtures: dict[str, np.ndarray]
    fixture_sets: dict[str, list[str]]
    stations: list[StationSpec]
    mesh_name: str = "mesh.tri"

    def __post_init__(self):
        self._validate()

    @property
    def candidate_stations(self) -> list[RigidTransform]:
        return [s.pose for s in self.stations]

    def target_by_id(self, target_id: str) -> TargetMark:
        for t in self.targets:
            if t.id == target_id:
                return t
        raise KeyError(target_id)

    def fixture_set_points(self, set_name: str) -> dict[str, np.ndarray]:
        names = self.fixture_sets[set_name]
        return {n: self.fixtures[n] for n in names}

    def _validate(self):
        seen = set()
        for t in self.targets:
            if t.id in seen:
                raise ValidationError(f"duplicate target id {t.id!r}")
            seen.add(t.id)
        if len(self.fixtures) < 3:
            raise ValidationError("need at least 3 fixture points")
        pts = np.array(list(self.fixtures.values()), dtype=float)
        centered = pts - pts.mean(axis=0)
        sv = np.linalg.svd(centered, compute_uv=False)
        if sv[1] < 1e-6:
            raise ValidationError("fixture points are collinear")
        for set_name, names in self.fixture_sets.items():
            for n in names:
                if n not in self.fixtures:
                    raise ValidationError(
                        f"fixture set {set_name!r} references unknown fixture {n!r}"
                    )
        for t in self.targets:
            dists = point_triangle_distances(self.mesh, t.point)
            best = float(dists.min())
            if best > t.tolerance_pos:
                raise ValidationError(
                    f"target {t.id!r} lies {best * 1000:.1f} mm off the mesh surface"
                )
            # A point on a shared edge belongs to several triangles; the
            # direction only has to be tangent to one of them.
            candidates = np.nonzero(dists <= best + 1e-9)[0]
            tilts = [
                abs(float(self.mesh.normals[i] @ t.direction)) for i in candidates
            ]
            tilt = math.asin(min(1.0, min(tilts)))
            if tilt > 1e-3:
                raise ValidationError(
                    f"target {t.id!r} direction is {tilt:.2e} rad out of the surface plane"
                )


# ---------------------------------------------------------------------------
# Geometry file: plain text, one record per line (see docs/formats.md)

def parse_mesh(text: str) -> TriMesh:
    vertices: list[list[float]] = []
    tris: list[list[int]] = []
    normals: list[list[float] | None] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "v" and len(parts) == 4:
                vertices.append([float(x) for x in parts[1:]])
            elif parts[0] == "t" and len(parts) in (4, 7):
                tris.append([int(x) for x in parts[1:4]])
                normals.append([float(x) for x in parts[4:7]] if len(parts) == 7 else None)
            else:
                raise ParseError(f"line {lineno}: unrecognized record {parts[0]!r}")
        except (ValueError, IndexError) as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(f"line {lineno}: {raw!r} is not a valid record") from exc
    if not tris:
        raise ParseError("geometry file has no triangles")
    explicit = [n for n in normals if n is not None]
    if explicit and len(explicit) != len(tris):
        raise ParseError("either all triangles or none may carry explicit normals")
    return TriMesh(vertices, tris, explicit if explicit else None)


def format_mesh(mesh: TriMesh) -> str:
    out = io.StringIO()
    for v in mesh.vertices:
        out.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
    for t in mesh.triangles:
        out.write(f"t {int(t[0])} {int(t[1])} {int(t[2])}\n")
    return out.getvalue()


# ---------------------------------------------------------------------------
# Workcell file (YAML, version 1)

def load_workcell(text: str, *, mesh_text: str | None = None, base_dir: Path | None = None) -> Workcell:
    """Parse and validate a workcell file.

    The mesh is resolved from `mesh_text` when given, otherwise read from
    the path named in the file relative to `base_dir`.
    """
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"workcell file is not valid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError("workcell file must be a mapping")
    if doc.get("version") != 1:
        raise ParseError("workcell file must declare 'version: 1'")

    mesh_name = doc.get("mesh", "mesh.tri")
    if mesh_text is None:
        if base_dir is None:
            raise ParseError("no mesh text given and no base directory to resolve it")
        mesh_path = Path(base_dir) / mesh_name
        if not mesh_path.exists():
            raise ParseError(f"mesh file {mesh_path} does not exist")
        mesh_text = mesh_path.read_text()
    mesh = parse_mesh(mesh_text)

    targets = []
    for tdoc in doc.get("targets", []):
        try:
            targets.append(
                TargetMark(
                    id=str(tdoc["id"]),
                    group=str(tdoc["group"]),
                    point=np.asarray(tdoc["point_m"], dtype=float),
                    direction=np.asarray(tdoc["direction"], dtype=float),
                    tolerance_pos=float(tdoc.get("tolerance_pos_m", DEFAULT_TOLERANCE_POS)),
                    tolerance_ang_deg=float(
                        tdoc.get("tolerance_ang_deg", DEFAULT_TOLERANCE_ANG_DEG)
                    ),
                )
            )
        except KeyError as exc:
            raise ParseError(f"target entry missing field {exc}") from exc

    fixtures = {}
    for name, xyz in (doc.get("fixtures") or {}).items():
        fixtures[str(name)] = np.asarray(xyz, dtype=float)

    fixture_sets = {
        str(k): [str(n) for n in v] for k, v in (doc.get("fixture_sets") or {}).items()
    }
    if not fixture_sets:
        fixture_sets = {"all": sorted(fixtures)}

    if "stations" in doc and doc["stations"]:
        stations = [
            StationSpec(
                x=float(s["xy_m"][0]), y=float(s["xy_m"][1]), yaw_deg=float(s["yaw_deg"])
            )
            for s in doc["stations"]
        ]
    else:
        stations = auto_stations(mesh)

    return Workcell(
        mesh=mesh,
        targets=targets,
        fixtures=fixtures,
        fixture_sets=fixture_sets,
        stations=stations,
        mesh_name=str(mesh_name),
    )


def save_workcell(cell: Workcell) -> str:
    doc = {
        "version": 1,
        "mesh": cell.mesh_name,
        "targets": [
            {
                "id": t.id,
                "group": t.group,
                "point_m": [float(x) for x in t.point],
                "direction": [float(x) for x in t.direction],
                "tolerance_pos_m": float(t.tolerance_pos),
                "tolerance_ang_deg": float(t.tolerance_ang_deg),
            }
            for t in cell.targets
        ],
        "fixtures": {k: [float(x) for x in v] for k, v in cell.fixtures.items()},
        "fixture_sets": {k: list(v) for k, v in cell.fixture_sets.items()},
        "stations": [
            {"xy_m": [float(s.x), float(s.y)], "yaw_deg": float(s.yaw_deg)}
            for s in cell.stations
        ],
    }
    return yaml.safe_dump(doc, sort_keys=False)


def auto_stations(mesh: TriMesh) -> list[StationSpec]:
    """Grid ring of candidate base poses around the mesh footprint.

    Spots on a 0.5 m grid between 1.0 m and 2.5 m outside the footprint
    box, each heading toward the footprint center.
    """
    lo, hi = mesh.bounds()
    cx, cy = (lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0
    xs = np.arange(lo[0] - STATION_RING_FAR, hi[0] + STATION_RING_FAR + 1e-9, STATION_GRID_STEP)
    ys = np.arange(lo[1] - STATION_RING_FAR, hi[1] + STATION_RING_FAR + 1e-9, STATION_GRID_STEP)
    specs = []
    for x in xs:
        for y in ys:
            dx = max(lo[0] - x, 0.0, x - hi[0])
            dy = max(lo[1] - y, 0.0, y - hi[1])
            d = math.hypot(dx, dy)
            if STATION_RING_NEAR <= d <= STATION_RING_FAR:
                yaw = math.degrees(math.atan2(cy - y, cx - x))
                specs.append(StationSpec(x=round(float(x), 6), y=round(float(y), 6), yaw_deg=yaw))
    return specs
