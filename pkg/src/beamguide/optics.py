"""Tool-mounted fan-line laser devices.

Each device projects a plane of light; the visible mark is the line where
that plane meets the workpiece surface. Real devices aim slightly off
their nominal axis, so the beam model carries a two-angle boresight
offset which can be fitted from observed versus predicted spots and
compensated when aim poses are constructed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from .geom import Ray, RigidTransform, Rotation, rot_x, rot_y, rpy_to_rotation, rotation_to_rpy, unit
from .workcell import TargetMark, TriMesh, ray_hit

MAX_OFFSET = math.radians(5.0)  # larger fitted values indicate broken hardware
MIN_RANGE, MAX_RANGE_LIMIT = 1.0, 20.0

CALIBRATION_MAX_ITERS = 50
CALIBRATION_STEP_TOL = 1e-10  # rad


class NoHitError(RuntimeError):
    """Beam misses the mesh entirely."""


class OutOfRangeError(RuntimeError):
    """Beam hits the mesh beyond the device's visible range."""


class DegenerateObservationsError(ValueError):
    """Observation set does not constrain both offset angles."""


class ImplausibleOffsetError(ValueError):
    """Fitted offset exceeds the plausible hardware bound."""


@dataclass(frozen=True)
class BeamOffset:
    """Boresight error: rotation of the true beam away from the device axis.

    Pitch tilts about device x, yaw about device y; the full offset is
    R_y(yaw) composed with R_x(pitch).
    """

    pitch: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        if abs(self.pitch) >= MAX_OFFSET or abs(self.yaw) >= MAX_OFFSET:
            raise ImplausibleOffsetError(
                f"boresight offset ({math.degrees(self.pitch):.2f}, "
                f"{math.degrees(self.yaw):.2f}) deg exceeds the 5 deg bound"
            )

    def rotation(self) -> Rotation:
        return rot_y(self.yaw).compose(rot_x(self.pitch))

    def compensation(self) -> Rotation:
        """Rotation that exactly cancels the offset when composed after it."""
        return self.rotation().inverse()


@dataclass(frozen=True)
class LaserDevice:
    """One fan-line emitter mounted on the tool flange.

    Beam axis is device +z; fan_normal is the light-plane normal in the
    device frame and must be perpendicular to the axis.
    """

    mount: RigidTransform = field(default_factory=RigidTransform.identity)
    fan_normal: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    offset: BeamOffset = field(default_factory=BeamOffset)
    max_range: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "fan_normal", unit(self.fan_normal))
        if abs(float(self.fan_normal[2])) > 1e-9:
            raise ValueError("fan_normal must be perpendicular to the device z axis")
        if not MIN_RANGE <= self.max_range <= MAX_RANGE_LIMIT:
            raise ValueError(f"max_range {self.max_range} m outside [{MIN_RANGE}, {MAX_RANGE_LIMIT}]")

    def with_offset(self, offset: BeamOffset) -> "LaserDevice":
        return LaserDevice(self.mount, self.fan_normal, offset, self.max_range)


@dataclass(frozen=True)
class LaserRig:
    devices: tuple[LaserDevice, ...]

    def __post_init__(self):
        if not 1 <= len(self.devices) <= 4:
            raise ValueError(f"rig holds 1 to 4 devices, got {len(self.devices)}")


@dataclass(frozen=True)
class ProjectedMark:
    """Where the fan line lands: surface point, line direction, beam length."""

    point: np.ndarray
    direction: np.ndarray
    range: float


def device_pose(tool: RigidTransform, device: LaserDevice) -> RigidTransform:
    return tool.compose(device.mount)


def beam_ray(tool: RigidTransform, device: LaserDevice) -> Ray:
    """True beam in the base frame: device +z bent by the boresight offset."""
    pose = device_pose(tool, device)
    d = pose.rotation.compose(device.offset.rotation()).apply((0.0, 0.0, 1.0))
    return Ray(pose.translation, unit(d))


def fan_plane_normal(tool: RigidTransform, device: LaserDevice) -> np.ndarray:
    """Light-plane normal in the base frame (the plane tilts with the offset)."""
    pose = device_pose(tool, device)
    return pose.rotation.compose(device.offset.rotation()).apply(device.fan_normal)


def project_mark(tool: RigidTransform, device: LaserDevice, mesh: TriMesh) -> ProjectedMark:
    """Intersect the beam with the mesh and extract the drawn line direction.

    The direction is the intersection of the light plane with the hit
    triangle's plane, signed toward the fan's positive half.
    """
    ray = beam_ray(tool, device)
    hit = ray_hit(mesh, ray)
    if hit is None:
        raise NoHitError("beam does not hit the mesh")
    point, tri, dist = hit
    if dist > device.max_range:
        raise OutOfRangeError(
            f"hit at {dist:.2f} m exceeds the {device.max_range:.1f} m visible range"
        )
    n_plane = fan_plane_normal(tool, device)
    n_tri = mesh.normals[tri]
    line = np.cross(n_plane, n_tri)
    norm = np.linalg.norm(line)
    if norm < 1e-12:
        raise NoHitError("light plane is parallel to the surface (grazing beam)")
    line = line / norm
    pose = device_pose(tool, device)
    positive = pose.rotation.compose(device.offset.rotation()).apply(
        np.cross((0.0, 0.0, 1.0), device.fan_normal)
    )
    if float(line @ positive) < 0.0:
        line = -line
    return ProjectedMark(point=point, direction=line, range=dist)


def verify_mark(achieved: ProjectedMark, nominal: TargetMark) -> tuple[float, float, bool]:
    """Position and line-angle error of an achieved mark against its target."""
    pos_err = float(np.linalg.norm(achieved.point - nominal.point))
    c = abs(float(unit(achieved.direction) @ unit(nominal.direction)))
    ang_err = math.acos(min(1.0, c))
    ok = pos_err <= nominal.tolerance_pos and ang_err <= nominal.tolerance_ang
    return pos_err, ang_err, ok


@dataclass(frozen=True)
class CalibrationFit:
    offset: BeamOffset
    rms: float
    residuals: tuple[float, ...]


def calibrate_offset(
    observations: list[tuple[RigidTransform, np.ndarray, np.ndarray]],
    mesh: TriMesh,
    device: LaserDevice,
) -> CalibrationFit:
    """Least-squares boresight fit from (tool pose, nominal spot, observed spot).

    Gauss-Newton on the two offset angles, starting from zero. The nominal
    spots are informational; the fit minimizes distance between predicted
    and observed spots over the mesh.
    """
    if len(observations) < 2:
        raise DegenerateObservationsError(
            "need at least 2 observations at distinct ranges or orientations"
        )

    def predict(pitch: float, yaw: float) -> np.ndarray:
        dev = device.with_offset(BeamOffset(pitch, yaw))
        pts = []
        for tool, _, _ in observations:
            ray = beam_ray(tool, dev)
            hit = ray_hit(mesh, ray)
            if hit is None:
                raise NoHitError("candidate offset walks the beam off the mesh")
            pts.append(hit[0])
        return np.concatenate(pts)

    observed = np.concatenate([np.asarray(obs, dtype=float) for _, _, obs in observations])
    pitch, yaw = 0.0, 0.0
    h = 1e-7
    for _ in range(CALIBRATION_MAX_ITERS):
        r0 = predict(pitch, yaw) - observed
        jac = np.empty((len(r0), 2))
        jac[:, 0] = (predict(pitch + h, yaw) - predict(pitch - h, yaw)) / (2 * h)
        jac[:, 1] = (predict(pitch, yaw + h) - predict(pitch, yaw - h)) / (2 * h)
        jtj = jac.T @ jac
        if np.linalg.cond(jtj) > 1e8:
            raise DegenerateObservationsError(
                "observations do not constrain both offset angles"
            )
        step = np.linalg.solve(jtj, -jac.T @ r0)
        pitch += float(step[0])
        yaw += float(step[1])
        if abs(pitch) >= MAX_OFFSET or abs(yaw) >= MAX_OFFSET:
            raise ImplausibleOffsetError(
                "fit walked outside the plausible offset bound"
            )
        if np.linalg.norm(step) < CALIBRATION_STEP_TOL:
            break
    offset = BeamOffset(pitch, yaw)
    res = predict(pitch, yaw) - observed
    per_obs = np.linalg.norm(res.reshape(-1, 3), axis=1)
    rms = float(np.sqrt(np.mean(per_obs**2)))
    return CalibrationFit(offset=offset, rms=rms, residuals=tuple(float(x) for x in per_obs))


# ---------------------------------------------------------------------------
# Rig file (YAML, version 1)

def save_rig(rig: LaserRig) -> str:
    devices = []
    for d in rig.devices:
        roll, pitch, yaw = rotation_to_rpy(d.mount.rotation)
        devices.append(
            {
                "mount": {
                    "origin_m": [float(x) for x in d.mount.translation],
                    "rpy_deg": [math.degrees(roll), math.degrees(pitch), math.degrees(yaw)],
                },
                "fan_normal": [float(x) for x in d.fan_normal],
                "offset_deg": {
                    "pitch": math.degrees(d.offset.pitch),
                    "yaw": math.degrees(d.offset.yaw),
                },
                "max_range_m": float(d.max_range),
            }
        )
    return yaml.safe_dump({"version": 1, "devices": devices}, sort_keys=False)


def load_rig(text: str) -> LaserRig:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ValueError(f"rig file is not valid YAML: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("version") != 1:
        raise ValueError("rig file must be a mapping with 'version: 1'")
    devices = []
    for ddoc in doc.get("devices", []):
        mount_doc = ddoc.get("mount", {})
        rpy = [math.radians(a) for a in mount_doc.get("rpy_deg", [0.0, 0.0, 0.0])]
        off = ddoc.get("offset_deg", {})
        devices.append(
            LaserDevice(
                mount=RigidTransform(
                    rpy_to_rotation(*rpy), mount_doc.get("origin_m", [0.0, 0.0, 0.0])
                ),
                fan_normal=np.asarray(ddoc.get("fan_normal", [1.0, 0.0, 0.0]), dtype=float),
                offset=BeamOffset(
                    pitch=math.radians(off.get("pitch", 0.0)),
                    yaw=math.radians(off.get("yaw", 0.0)),
                ),
                max_range=float(ddoc.get("max_range_m", 10.0)),
            )
        )
    return LaserRig(devices=tuple(devices))
