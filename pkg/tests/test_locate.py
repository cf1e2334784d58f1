import math

import numpy as np
import pytest

from beamguide.demo import build_demo_workcell
from beamguide.geom import RigidTransform, Rotation
from beamguide.locate import (
    Correspondences,
    DegenerateGeometryError,
    LocalizationResult,
    ResidualTooHighError,
    TooFewPointsError,
    UnknownFixtureError,
    load_measurements,
    localize,
    register_points,
    save_measurements,
    synthetic_measurements,
)


def random_pose(rng) -> RigidTransform:
    axis = rng.normal(size=3)
    rot = Rotation.from_axis_angle(axis, rng.uniform(-math.pi, math.pi))
    return RigidTransform(rot, rng.uniform(-2, 2, size=3))


def random_points(rng, n):
    return rng.uniform(-1.5, 1.5, size=(n, 3))


def test_identity_registration():
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    res = register_points(Correspondences(pts, pts))
    assert res.rms < 1e-12
    assert np.allclose(res.pose.rotation.m, np.eye(3), atol=1e-12)
    assert np.allclose(res.pose.translation, 0, atol=1e-12)


def test_known_transform_recovered():
    rng = np.random.default_rng(40)
    for _ in range(50):
        pose = random_pose(rng)
        w = random_points(rng, 5)
        r = np.array([pose.apply(p) for p in w])
        res = register_points(Correspondences(w, r))
        assert np.linalg.norm(res.pose.translation - pose.translation) < 1e-9
        assert res.pose.rotation.angle_to(pose.rotation) < 1e-9
        assert res.rms < 1e-9


def test_noisy_registration_rms():
    rng = np.random.default_rng(41)
    rmses = []
    for _ in range(100):
        pose = random_pose(rng)
        w = random_points(rng, 6)
        r = np.array([pose.apply(p) for p in w]) + rng.normal(0, 0.0005, size=(6, 3))
        res = register_points(Correspondences(w, r))
        rmses.append(res.rms)
    assert np.median(rmses) <= 0.0015


def test_rms_matches_residuals():
    rng = np.random.default_rng(42)
    pose = random_pose(rng)
    w = random_points(rng, 8)
    r = np.array([pose.apply(p) for p in w]) + rng.normal(0, 0.001, size=(8, 3))
    res = register_points(Correspondences(w, r))
    recomputed = math.sqrt(np.mean(np.square(res.per_point_residuals)))
    assert abs(res.rms - recomputed) < 1e-12


def test_translation_invariance():
    rng = np.random.default_rng(43)
    w = random_points(rng, 5)
    pose = random_pose(rng)
    r = np.array([pose.apply(p) for p in w])
    shift = np.array([1.0, -2.0, 0.5])
    res1 = register_points(Correspondences(w, r))
    res2 = register_points(Correspondences(w + shift, r + shift))
    assert res1.pose.rotation.angle_to(res2.pose.rotation) < 1e-10
    expected_t = res1.pose.translation + shift - res1.pose.rotation.apply(shift)
    assert np.allclose(res2.pose.translation, expected_t, atol=1e-10)


def test_reflection_guard():
    rng = np.random.default_rng(44)
    w = random_points(rng, 6)
    mirrored = w * np.array([1.0, 1.0, -1.0])
    res = register_points(Correspondences(w, mirrored))
    assert np.linalg.det(res.pose.rotation.m) > 0.999
    assert res.rms > 0.01  # mirroring cannot be explained by a rotation


def test_collinear_points_rejected():
    w = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]], dtype=float)
    with pytest.raises(DegenerateGeometryError):
        Correspondences(w, w)


def test_residual_ordering_fingers_perturbed_point():
    rng = np.random.default_rng(45)
    hits = 0
    trials = 300
    for _ in range(trials):
        pose = random_pose(rng)
        w = random_points(rng, 6)
        noise = rng.normal(0, 0.0005, size=(6, 3))
        r = np.array([pose.apply(p) for p in w]) + noise
        k = int(rng.integers(0, 6))
        bump = rng.normal(size=3)
        r[k] += bump / np.linalg.norm(bump) * 0.005  # 10x the noise
        res = register_points(Correspondences(w, r))
        if int(np.argmax(res.per_point_residuals)) == k:
            hits += 1
    assert hits / trials >= 0.99


def test_localize_noiseless():
    cell = build_demo_workcell()
    rng = np.random.default_rng(46)
    base = RigidTransform(Rotation.from_axis_angle((0, 0, 1), 0.7), (1.5, 3.0, 0.0))
    measured = synthetic_measurements(cell, base, "outer")
    res = localize(cell, measured)
    recovered = res.pose
    expected = base.invert()
    assert np.linalg.norm(recovered.translation - expected.translation) < 1e-9
    assert recovered.rotation.angle_to(expected.rotation) < 1e-9
    assert res.cell_fingerprint


def test_localize_displaced_fixture():
    cell = build_demo_workcell()
    base = RigidTransform(Rotation.identity(), (0.0, 3.0, 0.0))
    measured = synthetic_measurements(cell, base, "outer")
    name = "base-back-left"
    measured[name] = measured[name] + np.array([0.02, 0.0, 0.0])
    with pytest.raises(ResidualTooHighError) as err:
        localize(cell, measured)
    assert err.value.worst_fixture == name


def test_localize_too_few_points():
    cell = build_demo_workcell()
    base = RigidTransform.identity()
    measured = synthetic_measurements(cell, base, "outer")
    two = dict(list(measured.items())[:2])
    with pytest.raises(TooFewPointsError):
        localize(cell, two)


def test_localize_unknown_fixture():
    cell = build_demo_workcell()
    with pytest.raises(UnknownFixtureError):
        localize(cell, {"nope": np.zeros(3), "a": np.zeros(3), "b": np.zeros(3)})


def test_measurements_file_roundtrip():
    pts = {"a": np.array([0.1, 0.2, 0.3]), "b": np.array([-1.0, 0.0, 2.0])}
    back = load_measurements(save_measurements(pts))
    assert set(back) == {"a", "b"}
    for k in pts:
        assert np.array_equal(back[k], pts[k])
    with pytest.raises(ValueError):
        load_measurements("version: 7")
