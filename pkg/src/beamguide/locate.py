"""Base localization from fixture or marker point correspondences.

Closed-form least-squares rigid fit via the cross-covariance SVD with
determinant correction, wrapped by a named-fixture front end that rejects
poor fits and points at the fixture most likely to be mis-seated.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import yaml

from .geom import RigidTransform, Rotation

ACCEPT_RMS = 0.002  # m; keeps localization well under the end-to-end budget


class DegenerateGeometryError(ValueError):
    """Points are collinear; the rotation is not observable."""


class RankDeficientError(RuntimeError):
    """Numerical failure in the decomposition."""


class UnknownFixtureError(KeyError):
    """A measured name is not a fixture in the workcell."""


class TooFewPointsError(ValueError):
    """Fewer than 3 named points."""


class ResidualTooHighError(RuntimeError):
    """Fit succeeded but the residual exceeds the acceptance threshold.

    Usually a mis-seated fixture; `worst_fixture` names the prime suspect.
    """

    def __init__(self, rms: float, threshold: float, residuals: dict[str, float]):
        self.rms = rms
        self.threshold = threshold
        self.residuals = residuals
        self.worst_fixture = max(residuals, key=residuals.get)
        super().__init__(
            f"localization rms {rms * 1000:.2f} mm exceeds {threshold * 1000:.2f} mm; "
            f"largest residual at fixture {self.worst_fixture!r}"
        )


@dataclass(frozen=True)
class Correspondences:
    """Paired points: (workcell frame, robot base frame)."""

    workcell_points: np.ndarray  # (n, 3)
    robot_points: np.ndarray  # (n, 3)
    source: str = "fixture"  # "fixture" | "marker"

    def __post_init__(self):
        w = np.asarray(self.workcell_points, dtype=float).reshape(-1, 3)
        r = np.asarray(self.robot_points, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "workcell_points", w)
        object.__setattr__(self, "robot_points", r)
        if len(w) != len(r):
            raise ValueError("point sets must pair up")
        if len(w) < 3:
            raise TooFewPointsError(f"need at least 3 pairs, got {len(w)}")
        if self.source not in ("fixture", "marker"):
            raise ValueError("source must be fixture or marker")
        centered = w - w.mean(axis=0)
        sv = np.linalg.svd(centered, compute_uv=False)
        if sv[1] < 1e-6:
            raise DegenerateGeometryError("workcell points are collinear")


@dataclass(frozen=True)
class LocalizationResult:
    """Workcell frame expressed in the robot base frame."""

    pose: RigidTransform
    rms: float
    per_point_residuals: tuple[float, ...]
    cell_fingerprint: str = ""


def register_points(c: Correspondences) -> LocalizationResult:
    """Pose minimizing sum ||robot_i - pose(workcell_i)||^2, proper rotation."""
    w, r = c.workcell_points, c.robot_points
    w_mean, r_mean = w.mean(axis=0), r.mean(axis=0)
    h = (w - w_mean).T @ (r - r_mean)
    try:
        u, s, vt = np.linalg.svd(h)
    except np.linalg.LinAlgError as exc:
        raise RankDeficientError(f"SVD failed: {exc}") from exc
    if not np.all(np.isfinite(s)):
        raise RankDeficientError("cross-covariance decomposition is not finite")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0:
        raise RankDeficientError("cross-covariance is rank deficient")
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = r_mean - rot @ w_mean
    pose = RigidTransform(Rotation(rot), t)
    residuals = np.linalg.norm(r - (w @ rot.T + t), axis=1)
    rms = float(np.sqrt(np.mean(residuals**2)))
    return LocalizationResult(
        pose=pose, rms=rms, per_point_residuals=tuple(float(x) for x in residuals)
    )


def localize(
    cell,
    measured: dict[str, np.ndarray] | list[tuple[str, np.ndarray]],
    *,
    threshold: float = ACCEPT_RMS,
    source: str = "fixture",
) -> LocalizationResult:
    """Fit the workcell-in-base pose from named fixture measurements.

    Rejects fits whose rms exceeds the threshold; the raised error names
    the fixture carrying the largest residual (the mis-seat suspect).
    """
    pairs = list(measured.items()) if isinstance(measured, dict) else list(measured)
    if len(pairs) < 3:
        raise TooFewPointsError(f"need at least 3 measured fixtures, got {len(pairs)}")
    names = []
    w_pts, r_pts = [], []
    for name, xyz in pairs:
        if name not in cell.fixtures:
            raise UnknownFixtureError(name)
        names.append(name)
        w_pts.append(cell.fixtures[name])
        r_pts.append(np.asarray(xyz, dtype=float))
    result = register_points(
        Correspondences(np.array(w_pts), np.array(r_pts), source=source)
    )
    if result.rms > threshold:
        raise ResidualTooHighError(
            result.rms, threshold, dict(zip(names, result.per_point_residuals))
        )
    return LocalizationResult(
        pose=result.pose,
        rms=result.rms,
        per_point_residuals=result.per_point_residuals,
        cell_fingerprint=cell_fingerprint(cell),
    )


def cell_fingerprint(cell) -> str:
    """Stable digest of the workcell content, for staleness checks."""
    from .workcell import format_mesh, save_workcell

    payload = save_workcell(cell) + format_mesh(cell.mesh)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def synthetic_measurements(
    cell,
    base_pose_in_workcell: RigidTransform,
    fixture_set: str = "all",
    *,
    noise_std: float = 0.0,
    rng: np.random.Generator | None = None,
) -> dict[str, np.ndarray]:
    """Fixture points as a robot at the given base pose would measure them.

    The emulator-side stand-in for probing fixtures by hand: workcell
    fixture coordinates mapped into the robot frame, plus optional
    isotropic noise.
    """
    inv = base_pose_in_workcell.invert()
    if rng is None:
        rng = np.random.default_rng(0)
    out = {}
    for name in cell.fixture_sets.get(fixture_set, sorted(cell.fixtures)):
        p = inv.apply(cell.fixtures[name])
        if noise_std > 0:
            p = p + rng.normal(0.0, noise_std, size=3)
        out[name] = p
    return out


# ---------------------------------------------------------------------------
# Measured-points file (YAML, version 1)

def save_measurements(points: dict[str, np.ndarray]) -> str:
    doc = {
        "version": 1,
        "points": {k: [float(x) for x in v] for k, v in points.items()},
    }
    return yaml.safe_dump(doc, sort_keys=False)


def load_measurements(text: str) -> dict[str, np.ndarray]:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ValueError(f"measured-points file is not valid YAML: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("version") != 1:
        raise ValueError("measured-points file must be a mapping with 'version: 1'")
    return {str(k): np.asarray(v, dtype=float) for k, v in (doc.get("points") or {}).items()}
