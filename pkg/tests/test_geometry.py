import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from corrhal.errors import InvalidConfig, NonPositiveDepth
from corrhal.geometry import (
    CameraModel,
    MapFrame,
    RigidPose,
    image_to_map,
    lift,
    map_to_image,
    perturb,
    pose_compose,
    pose_error,
    pose_inverse,
    project,
    random_rotation,
    rot_z,
    so3_exp,
    so3_log,
    warp,
)

CAM = CameraModel(100.0, 100.0, 64.0, 48.0, 128, 96)


def random_pose(rng, shift=1.0):
    return RigidPose(random_rotation(rng), rng.normal(size=3) * shift)


def test_project_examples():
    np.testing.assert_array_equal(project([0, 0, 1]), [0, 0])
    np.testing.assert_array_equal(project([2, 4, 2]), [1, 2])
    with pytest.raises(NonPositiveDepth):
        project([1, 1, 0])
    with pytest.raises(NonPositiveDepth):
        project([0, 0, 1e-6])


def test_warp_examples():
    same = RigidPose.identity()
    np.testing.assert_allclose(warp([10, 20], 3.0, same, CAM, CAM), [10, 20], atol=1e-12)
    fwd = RigidPose(np.eye(3), [0, 0, 2])
    np.testing.assert_allclose(warp([64, 48], 2.0, fwd, CAM, CAM), [64, 48], atol=1e-12)
    side = RigidPose(np.eye(3), [1, 0, 0])
    np.testing.assert_allclose(warp([64, 48], 1.0, side, CAM, CAM), [164, 48], atol=1e-12)


def test_warp_rejects_bad_depth():
    with pytest.raises(NonPositiveDepth):
        warp([10, 10], 0.0, RigidPose.identity(), CAM, CAM)
    behind = RigidPose(np.eye(3), [0, 0, -5])
    with pytest.raises(NonPositiveDepth):
        warp([10, 10], 2.0, behind, CAM, CAM)


def test_warp_round_trip(rng):
    worst = 0.0
    for _ in range(200):
        pose = RigidPose(so3_exp(rng.normal(size=3) * 0.2), rng.normal(size=3) * 0.3)
        p = rng.uniform([0, 0], [128, 96])
        d = rng.uniform(2, 8)
        X_t = pose.apply(lift(p, d, CAM))
        q = warp(p, d, pose, CAM, CAM)
        back = warp(q, X_t[2], pose_inverse(pose), CAM, CAM)
        worst = max(worst, float(np.abs(back - p).max()))
    assert worst < 1e-6


def test_image_map_examples():
    np.testing.assert_array_equal(image_to_map([8, 12], MapFrame(4, 0, 0, 16, 12)), [2, 3])
    big = MapFrame.for_image(640, 480, 8, 0.5)
    assert (big.pad_x, big.pad_y, big.map_w, big.map_h) == (40, 30, 160, 120)
    np.testing.assert_array_equal(image_to_map([0, 0], big), [40, 30])


@given(
    st.integers(-4096, 4096),
    st.integers(-4096, 4096),
    st.sampled_from([1, 2, 4, 8]),
    st.integers(0, 40),
    st.integers(0, 40),
)
def test_image_map_round_trip_exact_on_dyadic_pixels(x64, y64, s, px, py):
    frame = MapFrame(s, px, py, 10 + 2 * px, 10 + 2 * py)
    p = np.array([x64, y64]) / 64.0  # pixel centers, keypoints and grid samples are dyadic
    np.testing.assert_array_equal(map_to_image(image_to_map(p, frame), frame), p)


@given(st.floats(-1e4, 1e4), st.floats(-1e4, 1e4), st.sampled_from([1, 3, 4, 8]), st.integers(0, 40))
def test_image_map_round_trip_general(x, y, s, pad):
    frame = MapFrame(s, pad, pad, 10 + 2 * pad, 10 + 2 * pad)
    p = np.array([x, y])
    np.testing.assert_allclose(map_to_image(image_to_map(p, frame), frame), p, rtol=1e-12, atol=1e-9)


def test_map_frame_sizing():
    f = MapFrame.for_image(64, 48, 4, 0.5)
    assert (f.pad_x, f.pad_y, f.map_w, f.map_h) == (8, 6, 32, 24)
    f0 = MapFrame.for_image(64, 48, 4, 0.0)
    assert (f0.map_w, f0.map_h) == (16, 12)
    np.testing.assert_array_equal(f.K_C @ [8, 12, 1], [10, 9, 1])
    with pytest.raises(InvalidConfig):
        MapFrame.for_image(64, 48, 4, -0.1)


@given(st.floats(1e-3, 1e3), st.floats(-5, 5), st.floats(-5, 5), st.floats(0.1, 10))
def test_project_scale_invariant(alpha, x, y, z):
    u = np.array([x, y, z])
    np.testing.assert_allclose(project(alpha * u), project(u), rtol=1e-12, atol=1e-12)


def test_pose_algebra(rng):
    ident = pose_inverse(RigidPose.identity())
    np.testing.assert_array_equal(ident.rotation, np.eye(3))
    np.testing.assert_array_equal(ident.translation, np.zeros(3))
    for _ in range(20):
        a = random_pose(rng)
        e = pose_compose(a, pose_inverse(a))
        np.testing.assert_allclose(e.rotation, np.eye(3), atol=1e-9)
        np.testing.assert_allclose(e.translation, 0, atol=1e-9)
        assert a.is_valid()
    t0 = [1.0, 2.0, 3.0]
    c = pose_compose(RigidPose(rot_z(30), t0), RigidPose(rot_z(60), t0))
    np.testing.assert_allclose(c.rotation, rot_z(90), atol=1e-12)


def test_pose_compose_applies_right_first(rng):
    a, b = random_pose(rng), random_pose(rng)
    X = rng.normal(size=(5, 3))
    np.testing.assert_allclose(pose_compose(a, b).apply(X), a.apply(b.apply(X)), atol=1e-12)


def test_pose_error_examples(rng):
    a = random_pose(rng)
    assert pose_error(a, a) == (0.0, 0.0)
    flip = RigidPose(rot_z(180), np.zeros(3))
    assert pose_error(flip, RigidPose.identity())[0] == pytest.approx(180.0, abs=1e-9)
    assert pose_error(RigidPose(np.eye(3), [1, 0, 0]), RigidPose.identity())[1] == 1.0


def test_pose_error_matches_arccos(rng):
    for _ in range(50):
        a, b = random_pose(rng), random_pose(rng)
        E = a.rotation @ b.rotation.T
        ref = math.degrees(math.acos(min(1, max(-1, (np.trace(E) - 1) / 2))))
        assert pose_error(a, b)[0] == pytest.approx(ref, abs=1e-6)


def test_pose_error_small_angles_precise():
    for deg in (1e-7, 1e-5, 1e-3):
        r, _ = pose_error(RigidPose(rot_z(deg), np.zeros(3)), RigidPose.identity())
        assert r == pytest.approx(deg, rel=1e-6)


def test_so3_round_trip(rng):
    for _ in range(50):
        w = rng.normal(size=3)
        w *= rng.uniform(0, 3.0) / np.linalg.norm(w)
        np.testing.assert_allclose(so3_log(so3_exp(w)), w, atol=1e-9)
    w = np.array([0.0, 0.0, math.pi])
    np.testing.assert_allclose(so3_exp(so3_log(so3_exp(w))), so3_exp(w), atol=1e-9)


def test_perturb_zero_is_identity(rng):
    a = random_pose(rng)
    b = perturb(a, np.zeros(6))
    np.testing.assert_array_equal(b.rotation, a.rotation)
    np.testing.assert_array_equal(b.translation, a.translation)


def test_camera_validation():
    with pytest.raises(InvalidConfig):
        CameraModel(0.0, 1.0, 1.0, 1.0, 4, 4)
    with pytest.raises(InvalidConfig):
        CameraModel(1.0, 1.0, 4.0, 1.0, 4, 4)
    with pytest.raises(InvalidConfig):
        CameraModel(1.0, 1.0, 0.0, 0.0, 0, 4)
    assert CameraModel.from_dict(CAM.to_dict()) == CAM
    np.testing.assert_allclose(CAM.K @ CAM.K_inv, np.eye(3), atol=1e-15)


def test_pose_serialization(rng):
    a = random_pose(rng)
    b = RigidPose.from_dict(a.to_dict())
    np.testing.assert_array_equal(a.rotation, b.rotation)
    np.testing.assert_array_equal(a.translation, b.translation)
    with pytest.raises(ValueError):
        a.rotation[0, 0] = 2.0
