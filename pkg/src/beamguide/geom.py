"""Rigid-body transforms, rotations, and rays.

Everything downstream (kinematics, projection, registration, planning)
rides on these three value types. All angles are radians; degrees appear
only at file and console boundaries.
"""

from __future__ import annotations

import math

import numpy as np

# Below this angle the axis of a rotation is numerically meaningless and
# small-angle forms are used instead.
ANGLE_EPSILON = 1e-12

_IDENTITY3 = np.eye(3)


def _as_vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if a.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {a.shape}")
    return a


def unit(v) -> np.ndarray:
    """Normalize a 3-vector. Raises on (near-)zero input."""
    a = _as_vec3(v)
    n = np.linalg.norm(a)
    if n < 1e-15:
        raise ValueError("cannot normalize a zero vector")
    return a / n


class Rotation:
    """Proper rotation stored as an orthonormal 3x3 matrix (det +1).

    Composition renormalizes, so long chains stay orthonormal.
    """

    __slots__ = ("m",)

    def __init__(self, matrix: np.ndarray, *, _skip_check: bool = False):
        m = np.asarray(matrix, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"rotation matrix must be 3x3, got {m.shape}")
        if not _skip_check:
            if not np.allclose(m.T @ m, _IDENTITY3, atol=1e-9):
                raise ValueError("matrix is not orthonormal")
            if np.linalg.det(m) < 0:
                raise ValueError("matrix is a reflection, not a rotation")
        self.m = m
        self.m.setflags(write=False)

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(_IDENTITY3.copy(), _skip_check=True)

    @classmethod
    def from_matrix(cls, matrix) -> "Rotation":
        return cls(np.array(matrix, dtype=float))

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "Rotation":
        """Rodrigues formula about a (not necessarily unit) axis."""
        a = unit(axis)
        c, s = math.cos(angle), math.sin(angle)
        x, y, z = a
        k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
        m = _IDENTITY3 + s * k + (1.0 - c) * (k @ k)
        return cls(m, _skip_check=True)

    def compose(self, other: "Rotation") -> "Rotation":
        """self after other: (self.compose(other)).apply(p) == self(other(p))."""
        return Rotation(_renormalize(self.m @ other.m), _skip_check=True)

    def apply(self, v) -> np.ndarray:
        return self.m @ _as_vec3(v)

    def inverse(self) -> "Rotation":
        return Rotation(self.m.T.copy(), _skip_check=True)

    def angle(self) -> float:
        """Rotation angle in [0, pi]."""
        # atan2 on the skew part keeps full precision near 0 and pi,
        # where acos of the trace loses half the significant digits.
        c = (np.trace(self.m) - 1.0) / 2.0
        w = np.array(
            [
                self.m[2, 1] - self.m[1, 2],
                self.m[0, 2] - self.m[2, 0],
                self.m[1, 0] - self.m[0, 1],
            ]
        )
        s = np.linalg.norm(w) / 2.0
        return math.atan2(s, c)

    def angle_to(self, other: "Rotation") -> float:
        return self.inverse().compose(other).angle()

    def as_rotvec(self) -> np.ndarray:
        """Axis-angle as a single 3-vector (axis * angle)."""
        theta = self.angle()
        if theta < ANGLE_EPSILON:
            return np.zeros(3)
        if theta > math.pi - 1e-6:
            # Near pi the off-diagonal extraction degenerates; take the
            # axis from the dominant column of R + I.
            b = self.m + _IDENTITY3
            col = b[:, int(np.argmax(np.diag(b)))]
            return unit(col) * theta
        w = np.array(
            [
                self.m[2, 1] - self.m[1, 2],
                self.m[0, 2] - self.m[2, 0],
                self.m[1, 0] - self.m[0, 1],
            ]
        )
        return w / (2.0 * math.sin(theta)) * theta

    def __eq__(self, other) -> bool:
        return isinstance(other, Rotation) and np.array_equal(self.m, other.m)

    def __repr__(self) -> str:
        return f"Rotation({self.m.tolist()!r})"


def _renormalize(m: np.ndarray) -> np.ndarray:
    # One Newton-Schulz step re-orthogonalizes a near-rotation matrix to
    # O(drift^2); keeps 10k-deep composition chains orthonormal and is far
    # cheaper than an SVD projection.
    return m @ (1.5 * _IDENTITY3 - 0.5 * (m.T @ m))


def rot_x(angle: float) -> Rotation:
    return Rotation.from_axis_angle((1.0, 0.0, 0.0), angle)


def rot_y(angle: float) -> Rotation:
    return Rotation.from_axis_angle((0.0, 1.0, 0.0), angle)


def rot_z(angle: float) -> Rotation:
    return Rotation.from_axis_angle((0.0, 0.0, 1.0), angle)


def rotation_between(a, b) -> Rotation:
    """Minimal-angle rotation carrying unit vector a onto unit vector b.

    Antiparallel inputs get a 180 degree turn about the coordinate axis
    most orthogonal to a (lowest index wins ties), so the result is
    deterministic.
    """
    av, bv = unit(a), unit(b)
    c = float(np.dot(av, bv))
    axis = np.cross(av, bv)
    s = float(np.linalg.norm(axis))
    if s < 1e-15:
        if c > 0.0:
            return Rotation.identity()
        pick = int(np.argmin(np.abs(av)))
        axis = np.zeros(3)
        axis[pick] = 1.0
        axis = unit(axis - np.dot(axis, av) * av)
        return Rotation.from_axis_angle(axis, math.pi)
    # atan2 keeps precision where acos of the dot product would not
    return Rotation.from_axis_angle(axis, math.atan2(s, c))


def rpy_to_rotation(roll: float, pitch: float, yaw: float) -> Rotation:
    """Fixed-axis x-y-z convention: R = Rz(yaw) Ry(pitch) Rx(roll)."""
    return rot_z(yaw).compose(rot_y(pitch)).compose(rot_x(roll))


def rotation_to_rpy(r: Rotation) -> tuple[float, float, float]:
    """Inverse of ``rpy_to_rotation``. Pitch is pinned to [-pi/2, pi/2]."""
    m = r.m
    sy = -m[2, 0]
    sy = max(-1.0, min(1.0, sy))
    pitch = math.asin(sy)
    if abs(sy) > 1.0 - 1e-12:
        # Gimbal lock: roll and yaw are coupled; put everything in yaw.
        return 0.0, pitch, math.atan2(-m[0, 1], m[1, 1])
    roll = math.atan2(m[2, 1], m[2, 2])
    yaw = math.atan2(m[1, 0], m[0, 0])
    return roll, pitch, yaw


class RigidTransform:
    """Rotation plus translation; maps points rotation-first."""

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation: Rotation | None = None, translation=None):
        self.rotation = rotation if rotation is not None else Rotation.identity()
        t = np.zeros(3) if translation is None else _as_vec3(translation).copy()
        t.setflags(write=False)
        self.translation = t

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_translation(cls, t) -> "RigidTransform":
        return cls(Rotation.identity(), t)

    def apply(self, p) -> np.ndarray:
        return self.rotation.apply(p) + self.translation

    def apply_direction(self, d) -> np.ndarray:
        return self.rotation.apply(d)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: compose(a, b).apply(p) == a.apply(b.apply(p))."""
        return RigidTransform(
            self.rotation.compose(other.rotation),
            self.rotation.apply(other.translation) + self.translation,
        )

    def invert(self) -> "RigidTransform":
        rinv = self.rotation.inverse()
        return RigidTransform(rinv, -rinv.apply(self.translation))

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.m
        m[:3, 3] = self.translation
        return m

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, RigidTransform)
            and self.rotation == other.rotation
            and np.array_equal(self.translation, other.translation)
        )

    def __repr__(self) -> str:
        return f"RigidTransform(t={self.translation.tolist()!r})"


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    return a.compose(b)


def apply(t: RigidTransform, p) -> np.ndarray:
    return t.apply(p)


def invert(t: RigidTransform) -> RigidTransform:
    return t.invert()


class Ray:
    """Half-line with unit direction."""

    __slots__ = ("origin", "direction")

    def __init__(self, origin, direction):
        self.origin = _as_vec3(origin).copy()
        d = _as_vec3(direction)
        n = np.linalg.norm(d)
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"ray direction must be unit length (|d|={n:.3e})")
        # Keep caller's bits when already unit; avoids renormalization drift.
        self.direction = d.copy() if abs(n - 1.0) <= 1e-12 else d / n
        self.origin.setflags(write=False)
        self.direction.setflags(write=False)

    def at(self, s: float) -> np.ndarray:
        return self.origin + s * self.direction

    def __repr__(self) -> str:
        return f"Ray(o={self.origin.tolist()!r}, d={self.direction.tolist()!r})"


def line_angle(a, b) -> float:
    """Unsigned angle between two directions modulo line symmetry, in [0, pi/2]."""
    c = abs(float(np.dot(unit(a), unit(b))))
    return math.acos(min(1.0, c))
