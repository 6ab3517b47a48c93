import numpy as np
import pytest

from src.particle_tracer.models.camera import CameraModel, Intrinsics, Pose


def test_pinhole_intrinsics():
    cam = CameraModel.pinhole(8, 6, 90.0)
    assert cam.intrinsics.fy == pytest.approx(3.0)
    assert (cam.intrinsics.cx, cam.intrinsics.cy) == (4.0, 3.0)
    assert cam.is_static


def test_look_at_is_opencv_convention():
    pose = Pose.look_at((0.0, 0.0, -4.0), (0.0, 0.0, 0.0))
    np.testing.assert_allclose(pose.rotation_matrix, np.eye(3), atol=1e-12)
    pose = Pose.look_at((3.0, 0.0, 0.0), (0.0, 0.0, 0.0))
    r = pose.rotation_matrix
    np.testing.assert_allclose(r[:, 2], [-1.0, 0.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-12)
    assert np.linalg.det(r) == pytest.approx(1.0)


def test_look_at_along_up_axis_still_valid():
    pose = Pose.look_at((0.0, -3.0, 0.0), (0.0, 0.0, 0.0))
    r = pose.rotation_matrix
    np.testing.assert_allclose(r[:, 2], [0.0, 1.0, 0.0], atol=1e-12)
    assert np.linalg.det(r) == pytest.approx(1.0)


def test_pose_matrix_roundtrip():
    pose = Pose.look_at((1.0, 2.0, 3.0), (0.0, 0.5, 0.0))
    back = Pose.from_matrix(pose.matrix())
    np.testing.assert_allclose(back.matrix(), pose.matrix(), atol=1e-12)


def test_rotation_normalized():
    pose = Pose(rotation=(2.0, 0.0, 0.0, 0.0))
    assert pose.rotation == pytest.approx((1.0, 0.0, 0.0, 0.0))


def test_camera_rejects_unknown_keys_and_bad_sizes():
    k = Intrinsics(fx=1.0, fy=1.0, cx=0.0, cy=0.0)
    with pytest.raises(ValueError):
        CameraModel(intrinsics=k, width=4, height=4, fov=30.0)
    with pytest.raises(ValueError):
        CameraModel(intrinsics=k, width=0, height=4)
    with pytest.raises(ValueError):
        Intrinsics(fx=-1.0, fy=1.0, cx=0.0, cy=0.0)


def test_moving_camera_is_not_static():
    cam = CameraModel.pinhole(4, 4, pose1=Pose(translation=(1.0, 0.0, 0.0)))
    assert not cam.is_static
    assert CameraModel.pinhole(4, 4, pose1=Pose()).is_static
