"""Bundled synthetic demo workcell and asset generator.

A C-channel "bedframe" shell roughly 4.0 x 2.8 x 1.5 m, open toward +y:
a bottom deck, a back wall whose interior face bulges into the cavity,
an overhanging curved roof, and closed end caps. 17 inner targets sit on
the cavity surfaces, 36 outer targets on the exterior faces. Dimensions
are invented for the demo; only the target counts and tolerances follow
the use case this package models.
"""

from __future__ import annotations

import math

import numpy as np

from .geom import Ray, unit
from .workcell import TargetMark, TriMesh, Workcell, auto_stations, ray_hit

X_HALF = 2.0  # structure spans x in [-2, 2]
Y_FRONT = 1.4  # open mouth side
Y_BACK = -1.4
DECK_BOTTOM = 0.2
DECK_TOP = 0.45
WALL_TOP = 1.2  # cavity ceiling (roof underside)
ROOF_TOP_EDGE = 1.32
ROOF_CROWN = 1.5

WALL_INNER_BASE = -0.95
WALL_BULGE = 0.10  # interior face bows into the cavity


def _wall_inner_y(x: float) -> float:
    return WALL_INNER_BASE + WALL_BULGE * math.cos(math.pi * x / (2 * X_HALF))


def _roof_top_z(y: float) -> float:
    return ROOF_TOP_EDGE + (ROOF_CROWN - ROOF_TOP_EDGE) * math.cos(
        math.pi * y / (2 * Y_FRONT)
    )


def _grid_patch(vertices, triangles, corner_fn, nu: int, nv: int, flip: bool = False):
    """Tessellate a parametric quad patch; corner_fn maps (u, v) in [0,1]^2 to xyz."""
    base = len(vertices)
    for i in range(nu + 1):
        for j in range(nv + 1):
            vertices.append(corner_fn(i / nu, j / nv))
    for i in range(nu):
        for j in range(nv):
            a = base + i * (nv + 1) + j
            b = a + (nv + 1)
            if flip:
                triangles.append((a, b, a + 1))
                triangles.append((b, b + 1, a + 1))
            else:
                triangles.append((a, a + 1, b))
                triangles.append((b, a + 1, b + 1))


def build_demo_mesh() -> TriMesh:
    v: list[tuple[float, float, float]] = []
    t: list[tuple[int, int, int]] = []

    # cavity floor (deck top), outward +z
    _grid_patch(
        v, t,
        lambda u, w: (-X_HALF + 2 * X_HALF * u, WALL_INNER_BASE + (Y_FRONT - WALL_INNER_BASE) * w, DECK_TOP),
        16, 8,
    )
    # deck front band, outward +y
    _grid_patch(
        v, t,
        lambda u, w: (-X_HALF + 2 * X_HALF * u, Y_FRONT, DECK_BOTTOM + (DECK_TOP - DECK_BOTTOM) * w),
        12, 2, flip=True,
    )
    # curved interior wall face, outward toward the cavity (+y side)
    _grid_patch(
        v, t,
        lambda u, w: (
            -X_HALF + 2 * X_HALF * u,
            _wall_inner_y(-X_HALF + 2 * X_HALF * u),
            DECK_TOP + (WALL_TOP - DECK_TOP) * w,
        ),
        24, 5, flip=True,
    )
    # back exterior wall, outward -y
    _grid_patch(
        v, t,
        lambda u, w: (-X_HALF + 2 * X_HALF * u, Y_BACK, DECK_BOTTOM + (ROOF_TOP_EDGE - DECK_BOTTOM) * w),
        12, 4,
    )
    # end caps, outward -x and +x
    _grid_patch(
        v, t,
        lambda u, w: (-X_HALF, Y_BACK + (Y_FRONT - Y_BACK) * u, DECK_BOTTOM + (ROOF_TOP_EDGE - DECK_BOTTOM) * w),
        8, 4, flip=True,
    )
    _grid_patch(
        v, t,
        lambda u, w: (X_HALF, Y_BACK + (Y_FRONT - Y_BACK) * u, DECK_BOTTOM + (ROOF_TOP_EDGE - DECK_BOTTOM) * w),
        8, 4,
    )
    # roof underside (cavity ceiling), outward -z
    _grid_patch(
        v, t,
        lambda u, w: (-X_HALF + 2 * X_HALF * u, WALL_INNER_BASE + (Y_FRONT - WALL_INNER_BASE) * w, WALL_TOP),
        8, 4, flip=True,
    )
    # curved roof top, outward +z
    _grid_patch(
        v, t,
        lambda u, w: (
            -X_HALF + 2 * X_HALF * u,
            Y_BACK + (Y_FRONT - Y_BACK) * w,
            _roof_top_z(Y_BACK + (Y_FRONT - Y_BACK) * w),
        ),
        8, 8,
    )
    # roof front band, outward +y
    _grid_patch(
        v, t,
        lambda u, w: (-X_HALF + 2 * X_HALF * u, Y_FRONT, WALL_TOP + (ROOF_TOP_EDGE - WALL_TOP) * w),
        8, 1, flip=True,
    )
    return TriMesh(np.array(v), np.array(t))


def _place_on_mesh(mesh: TriMesh, origin, toward, rough_direction) -> tuple[np.ndarray, np.ndarray]:
    """Exact on-surface point and in-plane direction via a ray cast."""
    ray = Ray(origin, unit(np.asarray(toward, dtype=float) - np.asarray(origin, dtype=float)))
    hit = ray_hit(mesh, ray)
    if hit is None:
        raise RuntimeError(f"demo placement ray from {origin} missed the mesh")
    point, tri, _ = hit
    n = mesh.normals[tri]
    d = np.asarray(rough_direction, dtype=float)
    d = d - (d @ n) * n
    return point, unit(d)


def build_demo_workcell() -> Workcell:
    mesh = build_demo_mesh()
    targets: list[TargetMark] = []

    def add(prefix, idx, group, origin, toward, direction):
        point, dirn = _place_on_mesh(mesh, origin, toward, direction)
        targets.append(
            TargetMark(
                id=f"{prefix}{idx:02d}",
                group=group,
                point=point,
                direction=dirn,
            )
        )

    # 10 inner marks on the curved wall face, two rows of five
    k = 1
    for z in (0.70, 1.00):
        for x in np.linspace(-1.6, 1.6, 5):
            add("in-", k, "inner", (x, 0.5, z), (x, -1.2, z), (1.0, 0.0, 0.0))
            k += 1
    # 7 inner marks on the cavity floor
    for x in np.linspace(-1.8, 1.8, 7):
        y = 0.8 if int(round(x * 10)) % 2 == 0 else 0.6
        add("in-", k, "inner", (x, y, 1.0), (x, y, 0.0), (1.0, 0.0, 0.0))
        k += 1

    # 12 outer marks on the back wall, three rows of four
    k = 1
    for z in (0.45, 0.80, 1.10):
        for x in np.linspace(-1.5, 1.5, 4):
            d = (1.0, 0.0, 0.0) if z != 0.80 else (0.0, 0.0, 1.0)
            add("out-", k, "outer", (x, -3.0, z), (x, 0.0, z), d)
            k += 1
    # 8 outer marks on the deck front band
    for x in np.linspace(-1.75, 1.75, 8):
        add("out-", k, "outer", (x, 3.0, 0.33), (x, 0.0, 0.33), (1.0, 0.0, 0.0))
        k += 1
    # 8 outer marks per end cap
    for sign in (-1.0, 1.0):
        for z in (0.55, 1.00):
            for y in np.linspace(-1.0, 1.0, 4):
                d = (0.0, 1.0, 0.0) if z < 0.8 else (0.0, 0.0, 1.0)
                add("out-", k, "outer", (sign * 3.0, y, z), (0.0, y, z), d)
                k += 1

    fixtures = {
        "cavity-left": np.array([-1.8, -0.5, DECK_TOP]),
        "cavity-right": np.array([1.8, -0.5, DECK_TOP]),
        "cavity-front": np.array([0.0, 1.0, DECK_TOP]),
        "cavity-wall": np.array([0.0, _wall_inner_y(0.0), 0.9]),
        "base-back-left": np.array([-X_HALF, Y_BACK, DECK_BOTTOM]),
        "base-back-right": np.array([X_HALF, Y_BACK, DECK_BOTTOM]),
        "base-front-left": np.array([-X_HALF, Y_FRONT, DECK_BOTTOM]),
        "roof-crown": np.array([0.0, 0.0, ROOF_CROWN]),
    }
    fixture_sets = {
        "inner": ["cavity-left", "cavity-right", "cavity-front", "cavity-wall"],
        "outer": ["base-back-left", "base-back-right", "base-front-left", "roof-crown"],
    }

    return Workcell(
        mesh=mesh,
        targets=targets,
        fixtures=fixtures,
        fixture_sets=fixture_sets,
        stations=auto_stations(mesh),
        mesh_name="bedframe.tri",
    )


def demo_rig():
    """Two crossed fan-line devices; device 0 carries a known boresight error."""
    from .optics import BeamOffset, LaserDevice, LaserRig

    return LaserRig(
        devices=(
            LaserDevice(
                offset=BeamOffset(math.radians(0.4), math.radians(-0.25)),
                fan_normal=np.array([1.0, 0.0, 0.0]),
            ),
            LaserDevice(
                offset=BeamOffset(math.radians(-0.15), math.radians(0.3)),
                fan_normal=np.array([0.0, 1.0, 0.0]),
            ),
        )
    )


def demo_calibration_observations(cell=None):
    """Synthetic spot observations against the back wall for device 0.

    Tool poses aim the device at the exterior wall from 1 to 3 m out;
    observed spots are forward-simulated with the demo rig's true offset,
    nominal spots with a zero offset.
    """
    from .geom import RigidTransform, rotation_between
    from .optics import BeamOffset

    if cell is None:
        cell = build_demo_workcell()
    device_true = demo_rig().devices[0]
    device_nominal = device_true.with_offset(BeamOffset())
    aim = rotation_between((0.0, 0.0, 1.0), (0.0, 1.0, 0.0))  # device +z toward +y
    observations = []
    for x, r, z in ((-1.2, 1.0, 0.6), (-0.4, 1.7, 0.9), (0.4, 2.4, 0.7), (1.2, 3.0, 1.1)):
        tool = RigidTransform(aim, (x, Y_BACK - r, z))
        from .optics import beam_ray

        nominal = ray_hit(cell.mesh, beam_ray(tool, device_nominal))[0]
        observed = ray_hit(cell.mesh, beam_ray(tool, device_true))[0]
        observations.append((tool, nominal, observed))
    return observations


def write_demo_files(directory) -> None:
    """Write the bundled demo assets: mesh, workcell, rig, arm, examples."""
    from pathlib import Path

    import yaml

    from .arm import default_model, save_arm
    from .geom import RigidTransform, rot_z, rotation_to_rpy
    from .locate import save_measurements, synthetic_measurements
    from .optics import save_rig
    from .workcell import format_mesh, save_workcell

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cell = build_demo_workcell()
    (directory / "bedframe.tri").write_text(format_mesh(cell.mesh))
    (directory / "workcell.yaml").write_text(save_workcell(cell))
    (directory / "rig.yaml").write_text(save_rig(demo_rig()))
    (directory / "arm.yaml").write_text(save_arm(default_model()))

    obs_doc = {
        "version": 1,
        "observations": [],
    }
    for tool, nominal, observed in demo_calibration_observations(cell):
        roll, pitch, yaw = rotation_to_rpy(tool.rotation)
        obs_doc["observations"].append(
            {
                "tool": {
                    "origin_m": [float(x) for x in tool.translation],
                    "rpy_deg": [math.degrees(roll), math.degrees(pitch), math.degrees(yaw)],
                },
                "nominal_m": [float(x) for x in nominal],
                "observed_m": [float(x) for x in observed],
            }
        )
    (directory / "observations.yaml").write_text(yaml.safe_dump(obs_doc, sort_keys=False))

    # example fixture measurements for a base parked at the cavity mouth
    base = RigidTransform(rot_z(math.radians(-90.0)), (0.0, 2.6, 0.0))
    measured = synthetic_measurements(cell, base, "inner")
    (directory / "measured-inner.yaml").write_text(save_measurements(measured))
