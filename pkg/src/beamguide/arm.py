"""Serial 6-revolute-joint manipulator: forward and inverse kinematics.

The model is a plain kinematic chain: each joint rotates about a fixed
axis in its parent frame, offset by a fixed parent-to-joint transform.
IK is damped least squares on the geometric Jacobian with random
restarts; there are no dynamics, payload is carried as metadata only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from .geom import RigidTransform, Rotation, rpy_to_rotation, rotation_to_rpy, unit

# JointVector: a shape (6,) float array of joint angles in radians.
JointVector = np.ndarray

DEFAULT_JOINT_LIMIT = math.radians(170.0)
DEFAULT_JOINT_SPEED = math.radians(60.0)  # rad/s

IK_DAMPING = 0.05
IK_MAX_ITERS = 200
IK_RESTARTS = 10
IK_STEP_CLAMP = 0.2  # rad per joint per iteration
IK_POS_TOL = 1e-4  # m, contract tolerance
IK_ROT_TOL = 1e-3  # rad, contract tolerance


class JointLimitError(ValueError):
    """A joint angle is outside the model's limits."""


class NoConvergenceError(RuntimeError):
    """IK exhausted its iteration and restart budget."""


@dataclass(frozen=True)
class Joint:
    axis: np.ndarray  # unit rotation axis in the parent frame
    fixed: RigidTransform  # parent frame -> this joint's frame
    lo: float = -DEFAULT_JOINT_LIMIT
    hi: float = DEFAULT_JOINT_LIMIT
    vmax: float = DEFAULT_JOINT_SPEED

    def __post_init__(self):
        object.__setattr__(self, "axis", unit(self.axis))
        if not self.lo < self.hi:
            raise ValueError(f"joint limits must satisfy lo < hi, got [{self.lo}, {self.hi}]")
        if self.vmax <= 0:
            raise ValueError("joint speed must be positive")


@dataclass(frozen=True)
class ArmModel:
    joints: tuple[Joint, ...]
    tool: RigidTransform = field(default_factory=RigidTransform.identity)
    max_reach: float = 0.9  # m, declared envelope radius from base origin
    min_reach: float = 0.15  # m, dead zone radius
    payload_kg: float = 6.0  # metadata only, no dynamics
    name: str = "arm"

    def __post_init__(self):
        if len(self.joints) != 6:
            raise ValueError(f"arm model needs exactly 6 joints, got {len(self.joints)}")
        if self.max_reach <= 0:
            raise ValueError("declared max reach must be positive")

    @property
    def lower_limits(self) -> np.ndarray:
        return np.array([j.lo for j in self.joints])

    @property
    def upper_limits(self) -> np.ndarray:
        return np.array([j.hi for j in self.joints])

    @property
    def joint_speeds(self) -> np.ndarray:
        return np.array([j.vmax for j in self.joints])


def as_joint_vector(q) -> JointVector:
    a = np.asarray(q, dtype=float)
    if a.shape != (6,):
        raise ValueError(f"joint vector must have 6 entries, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("joint vector contains non-finite values")
    return a


def check_limits(model: ArmModel, q: JointVector, slack: float = 1e-9) -> None:
    q = as_joint_vector(q)
    for i, j in enumerate(model.joints):
        if not (j.lo - slack <= q[i] <= j.hi + slack):
            raise JointLimitError(
                f"joint {i + 1} angle {q[i]:.4f} rad outside [{j.lo:.4f}, {j.hi:.4f}]"
            )


def _axis_angle_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    # Rodrigues, raw ndarray form; the hot path below avoids Rotation objects.
    c, s = math.cos(angle), math.sin(angle)
    x, y, z = axis
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def _frames_raw(model: ArmModel, q: JointVector) -> list[tuple[np.ndarray, np.ndarray]]:
    """(rotation matrix, origin) of every joint frame plus the tool (7 entries)."""
    frames = []
    r = np.eye(3)
    t = np.zeros(3)
    for joint, angle in zip(model.joints, q):
        fr, ft = joint.fixed.rotation.m, joint.fixed.translation
        t = r @ ft + t
        r = (r @ fr) @ _axis_angle_matrix(joint.axis, angle)
        frames.append((r, t))
    frames.append((r @ model.tool.rotation.m, r @ model.tool.translation + t))
    return frames


def fk(model: ArmModel, q: JointVector) -> RigidTransform:
    """Tool pose in the robot base frame. Raises JointLimitError out of range."""
    q = as_joint_vector(q)
    check_limits(model, q)
    r, t = _frames_raw(model, q)[-1]
    return RigidTransform(Rotation(r, _skip_check=True), t)


def jacobian(model: ArmModel, q: JointVector) -> np.ndarray:
    """6x6 geometric Jacobian at the tool point, base frame.

    Rows 0..2 map joint rates to tool linear velocity, rows 3..5 to
    angular velocity.
    """
    q = as_joint_vector(q)
    frames = _frames_raw(model, q)
    p_tool = frames[-1][1]
    jac = np.zeros((6, 6))
    for i, joint in enumerate(model.joints):
        r, o = frames[i]
        z = r @ joint.axis
        jac[:3, i] = np.cross(z, p_tool - o)
        jac[3:, i] = z
    return jac


def _rotvec_raw(m: np.ndarray) -> np.ndarray:
    # Axis * angle of a rotation matrix; stable at both ends of [0, pi].
    w = np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])
    s = np.linalg.norm(w) / 2.0
    c = (np.trace(m) - 1.0) / 2.0
    theta = math.atan2(s, c)
    if theta < 1e-12:
        return np.zeros(3)
    if theta > math.pi - 1e-6:
        b = m + np.eye(3)
        col = b[:, int(np.argmax(np.diag(b)))]
        return col / np.linalg.norm(col) * theta
    return w / (2.0 * s) * theta


def _pose_error(target: RigidTransform, r: np.ndarray, t: np.ndarray) -> np.ndarray:
    e = np.empty(6)
    e[:3] = target.translation - t
    e[3:] = _rotvec_raw(target.rotation.m @ r.T)
    return e


def ik(
    model: ArmModel,
    target: RigidTransform,
    seed: JointVector,
    *,
    rng: np.random.Generator | None = None,
    max_iters: int = IK_MAX_ITERS,
    restarts: int = IK_RESTARTS,
    damping: float = IK_DAMPING,
    pos_tol: float = IK_POS_TOL,
    rot_tol: float = IK_ROT_TOL,
) -> JointVector:
    """Solve joint angles so fk(result) matches target within tolerance.

    Damped least squares from the seed, then up to `restarts` random
    in-limit restarts. Deterministic for a given rng seed (a fresh
    default generator is used when rng is None).
    """
    if not np.all(np.isfinite(target.translation)):
        raise ValueError("target pose is not finite")
    seed = np.clip(as_joint_vector(seed), model.lower_limits, model.upper_limits)
    if rng is None:
        rng = np.random.default_rng(0)
    lo, hi = model.lower_limits, model.upper_limits
    lam2 = damping * damping

    starts = [seed] + [rng.uniform(lo, hi) for _ in range(restarts)]
    eye6 = np.eye(6)
    for q0 in starts:
        q = q0.copy()
        best = math.inf
        since_improved = 0
        for _ in range(max_iters):
            frames = _frames_raw(model, q)
            e = _pose_error(target, *frames[-1])
            pos_err, rot_err = np.linalg.norm(e[:3]), np.linalg.norm(e[3:])
            if pos_err < pos_tol * 0.9 and rot_err < rot_tol * 0.9:
                return q
            score = pos_err + 0.1 * rot_err
            if score < best * 0.999:
                best = score
                since_improved = 0
            else:
                since_improved += 1
                if since_improved > 25:
                    # Stalled in a local minimum. Joints pinned against a
                    # limit get kicked off the wall, otherwise two random
                    # joints get a hard kick; either way the attempt keeps
                    # its remaining iteration budget.
                    at_lo = q <= lo + 1e-6
                    at_hi = q >= hi - 1e-6
                    q = q.copy()
                    if at_lo.any() or at_hi.any():
                        q[at_lo] += rng.uniform(1.0, 2.5, int(at_lo.sum()))
                        q[at_hi] -= rng.uniform(1.0, 2.5, int(at_hi.sum()))
                        q = np.clip(q, lo, hi)
                    else:
                        idx = rng.choice(6, size=2, replace=False)
                        q[idx] = np.clip(
                            q[idx] + rng.uniform(-2.0, 2.0, 2), lo[idx], hi[idx]
                        )
                    best = math.inf
                    since_improved = 0
                    continue
            # Clamping the task error keeps early steps sane far from goal.
            ec = e.copy()
            if pos_err > 0.15:
                ec[:3] *= 0.15 / pos_err
            if rot_err > 0.75:
                ec[3:] *= 0.75 / rot_err
            p_tool = frames[-1][1]
            jac = np.zeros((6, 6))
            for i, joint in enumerate(model.joints):
                r, o = frames[i]
                z = r @ joint.axis
                jac[:3, i] = np.cross(z, p_tool - o)
                jac[3:, i] = z
            # dq = J^T (J J^T + lambda^2 I)^-1 e, with the damping shrinking
            # alongside the error so convergence is quadratic near the goal.
            eff_lam2 = max(1e-6, min(lam2, score * score))
            a = jac @ jac.T + eff_lam2 * eye6
            dq = jac.T @ np.linalg.solve(a, ec)
            dq = np.clip(dq, -IK_STEP_CLAMP, IK_STEP_CLAMP)
            q = np.clip(q + dq, lo, hi)
        e = _pose_error(target, *_frames_raw(model, q)[-1])
        if np.linalg.norm(e[:3]) <= pos_tol and np.linalg.norm(e[3:]) <= rot_tol:
            return q
    raise NoConvergenceError(
        f"ik did not converge after {len(starts)} starts x {max_iters} iterations "
        "(target unreachable or awkward)"
    )


def reachable(model: ArmModel, p) -> bool:
    """Cheap sphere-shell pre-filter; a True answer is advisory (run ik to be sure)."""
    d = float(np.linalg.norm(np.asarray(p, dtype=float)))
    return model.min_reach <= d <= model.max_reach


def joint_move_duration(q_from: JointVector, q_to: JointVector, speeds, speed_fraction: float = 1.0) -> float:
    """Seconds for a constant-velocity synchronized joint move.

    The slowest joint sets the pace; the same formula drives both the
    cycle-time estimate and the controller emulator.
    """
    if not 0.0 < speed_fraction <= 1.0:
        raise ValueError("speed fraction must be in (0, 1]")
    delta = np.abs(as_joint_vector(q_to) - as_joint_vector(q_from))
    return float(np.max(delta / (speed_fraction * np.asarray(speeds, dtype=float))))


def default_model() -> ArmModel:
    """Anthropomorphic 6R arm with a 0.900 m maximum horizontal reach.

    Link split: 0.135 m base riser, 0.400 m upper arm, 0.350 m forearm,
    0.150 m wrist stack. Zero pose points straight out along +x.
    """
    tx = RigidTransform.from_translation
    joints = (
        Joint(axis=np.array([0.0, 0.0, 1.0]), fixed=RigidTransform.identity()),
        Joint(axis=np.array([0.0, 1.0, 0.0]), fixed=tx((0.0, 0.0, 0.135))),
        Joint(axis=np.array([0.0, 1.0, 0.0]), fixed=tx((0.400, 0.0, 0.0))),
        Joint(axis=np.array([1.0, 0.0, 0.0]), fixed=tx((0.350, 0.0, 0.0))),
        Joint(axis=np.array([0.0, 1.0, 0.0]), fixed=tx((0.080, 0.0, 0.0))),
        Joint(axis=np.array([1.0, 0.0, 0.0]), fixed=tx((0.070, 0.0, 0.0))),
    )
    return ArmModel(joints=joints, max_reach=0.9, min_reach=0.15, name="anthro-900")


# ---------------------------------------------------------------------------
# Parameter file (YAML, schema documented in docs/formats.md)

def _transform_to_doc(t: RigidTransform) -> dict:
    roll, pitch, yaw = rotation_to_rpy(t.rotation)
    return {
        "origin_m": [float(x) for x in t.translation],
        "rpy_deg": [math.degrees(roll), math.degrees(pitch), math.degrees(yaw)],
    }


def _transform_from_doc(doc: dict) -> RigidTransform:
    origin = doc.get("origin_m", [0.0, 0.0, 0.0])
    rpy = [math.radians(a) for a in doc.get("rpy_deg", [0.0, 0.0, 0.0])]
    return RigidTransform(rpy_to_rotation(*rpy), origin)


def save_arm(model: ArmModel) -> str:
    doc = {
        "version": 1,
        "name": model.name,
        "max_reach_m": float(model.max_reach),
        "min_reach_m": float(model.min_reach),
        "payload_kg": float(model.payload_kg),
        "joints": [
            {
                "axis": [float(x) for x in j.axis],
                **_transform_to_doc(j.fixed),
                "limit_deg": [math.degrees(j.lo), math.degrees(j.hi)],
                "vmax_deg_s": math.degrees(j.vmax),
            }
            for j in model.joints
        ],
        "tool": _transform_to_doc(model.tool),
    }
    return yaml.safe_dump(doc, sort_keys=False)


def load_arm(text: str) -> ArmModel:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ValueError(f"arm file is not valid YAML: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("version") != 1:
        raise ValueError("arm file must be a mapping with 'version: 1'")
    joints = []
    for jdoc in doc.get("joints", []):
        lo, hi = jdoc.get("limit_deg", [-170.0, 170.0])
        joints.append(
            Joint(
                axis=np.asarray(jdoc["axis"], dtype=float),
                fixed=_transform_from_doc(jdoc),
                lo=math.radians(lo),
                hi=math.radians(hi),
                vmax=math.radians(jdoc.get("vmax_deg_s", 60.0)),
            )
        )
    return ArmModel(
        joints=tuple(joints),
        tool=_transform_from_doc(doc.get("tool", {})),
        max_reach=float(doc.get("max_reach_m", 0.9)),
        min_reach=float(doc.get("min_reach_m", 0.15)),
        payload_kg=float(doc.get("payload_kg", 6.0)),
        name=str(doc.get("name", "arm")),
    )
